//! Office-environment maps compiled into navigation POMDPs.
//!
//! Each non-wall cell is a location; each location gives four states, one
//! per heading. The robot can move forward, turn left, turn right, or
//! declare the goal. Declaring moves every state into an absorbing terminal
//! state, so a success after `n` moves is worth exactly `gamma^n`. In every
//! state the robot reads its front, left and right surroundings as wall,
//! open, doorway or undetermined; the three readings are independent given
//! the state, which gives 64 observations (plus one for the terminal).
//!
//! Map files look like:
//!
//! ```text
//! name: corridor
//! goal: 2 1 E
//! #####
//! #...#
//! #####
//! ```
//!
//! `#` is a wall, `.` a corridor cell and `r` a room cell. `x` grows to the
//! right and `y` downward; north is decreasing `y`.

use std::fmt;

use thiserror::Error;

use crate::pomdp::{ObservationTable, Pomdp, PomdpTables, PROB_TOL};

pub const MOVE_FORWARD: usize = 0;
pub const TURN_LEFT: usize = 1;
pub const TURN_RIGHT: usize = 2;
pub const DECLARE_GOAL: usize = 3;

pub const ACTION_NAMES: [&str; 4] = ["move-forward", "turn-left", "turn-right", "declare-goal"];

/// Number of sensor observations (4 readings in each of 3 directions).
pub const SENSOR_OBSERVATIONS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("map line {line}, column {column}: {message}")]
pub struct MapError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseModelError {
    #[error("{what} distribution sums to {sum}")]
    NotDistribution { what: &'static str, sum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Corridor,
    Room,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    fn letter(self) -> char {
        ['N', 'E', 'S', 'W'][self.index()]
    }

    fn from_letter(c: &str) -> Option<Heading> {
        match c {
            "N" => Some(Heading::North),
            "E" => Some(Heading::East),
            "S" => Some(Heading::South),
            "W" => Some(Heading::West),
            _ => None,
        }
    }
}

/// What is actually next to the robot in one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Percept {
    Wall,
    Open,
    Doorway,
}

impl Percept {
    fn index(self) -> usize {
        self as usize
    }
}

/// Sensor readings, in observation-encoding order.
pub const READING_LETTERS: [char; 4] = ['W', 'O', 'D', 'U'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    pub name: Option<String>,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub goal: (usize, usize, Heading),
}

impl GridMap {
    pub fn new(
        name: Option<String>,
        rows: Vec<Vec<Cell>>,
        goal: (usize, usize, Heading),
    ) -> Result<Self, MapError> {
        let err = |message: String| MapError { line: 0, column: 0, message };
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(err("rows have different widths".into()));
        }
        let cells: Vec<Cell> = rows.into_iter().flatten().collect();
        if !cells.iter().any(|&c| c != Cell::Wall) {
            return Err(err("map has no open cell".into()));
        }
        let map = GridMap { name, width, height, cells, goal };
        if map.cell(goal.0 as i64, goal.1 as i64) == Cell::Wall {
            return Err(err(format!("goal ({}, {}) is not an open cell", goal.0, goal.1)));
        }
        Ok(map)
    }

    /// The cell at `(x, y)`; off-grid reads as wall.
    pub fn cell(&self, x: i64, y: i64) -> Cell {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            Cell::Wall
        } else {
            self.cells[y as usize * self.width + x as usize]
        }
    }

    /// Open cells in row-major order.
    pub fn locations(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.cell(x as i64, y as i64) != Cell::Wall)
            .collect()
    }

    fn neighbor(&self, x: usize, y: usize, h: Heading) -> Option<(usize, usize)> {
        let (dx, dy) = h.delta();
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        (self.cell(nx, ny) != Cell::Wall).then_some((nx as usize, ny as usize))
    }

    fn percept(&self, x: usize, y: usize, h: Heading) -> Percept {
        let here = self.cell(x as i64, y as i64);
        match self.neighbor(x, y, h) {
            None => Percept::Wall,
            Some((nx, ny)) if self.cell(nx as i64, ny as i64) != here => Percept::Doorway,
            Some(_) => Percept::Open,
        }
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(n) = &self.name {
            writeln!(f, "name: {n}")?;
        }
        writeln!(f, "goal: {} {} {}", self.goal.0, self.goal.1, self.goal.2.letter())?;
        for y in 0..self.height {
            let row: String = (0..self.width)
                .map(|x| match self.cell(x as i64, y as i64) {
                    Cell::Wall => '#',
                    Cell::Corridor => '.',
                    Cell::Room => 'r',
                })
                .collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Parses a map file.
pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut name = None;
    let mut goal: Option<(usize, usize, Heading, usize)> = None;
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut first_row_line = 0;
    let err = |line: usize, column: usize, message: String| MapError { line, column, message };

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            if rows.is_empty() {
                continue;
            }
            // trailing blank lines end the grid
            continue;
        }
        if rows.is_empty() {
            if let Some(rest) = line.strip_prefix("name:") {
                name = Some(rest.trim().to_string());
                continue;
            }
            if let Some(rest) = line.strip_prefix("goal:") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(err(line_no, 6, "expected `goal: <x> <y> <N|E|S|W>`".into()));
                }
                let x = parts[0]
                    .parse()
                    .map_err(|_| err(line_no, 6, format!("bad goal x `{}`", parts[0])))?;
                let y = parts[1]
                    .parse()
                    .map_err(|_| err(line_no, 6, format!("bad goal y `{}`", parts[1])))?;
                let h = Heading::from_letter(parts[2])
                    .ok_or_else(|| err(line_no, 6, format!("bad goal heading `{}`", parts[2])))?;
                goal = Some((x, y, h, line_no));
                continue;
            }
            if line.starts_with("//") {
                continue;
            }
            first_row_line = line_no;
        }
        let mut row = Vec::with_capacity(line.len());
        for (col, ch) in line.chars().enumerate() {
            row.push(match ch {
                '#' => Cell::Wall,
                '.' => Cell::Corridor,
                'r' => Cell::Room,
                other => return Err(err(line_no, col + 1, format!("unexpected character `{other}`"))),
            });
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(err(
                    line_no,
                    row.len().min(first.len()) + 1,
                    format!("row has width {}, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(err(text.lines().count().max(1), 1, "map has no grid rows".into()));
    }
    if !rows.iter().flatten().any(|&c| c != Cell::Wall) {
        return Err(err(first_row_line, 1, "map has no open cell".into()));
    }
    let Some((gx, gy, gh, gline)) = goal else {
        return Err(err(1, 1, "missing `goal:` header".into()));
    };
    let height = rows.len();
    let width = rows[0].len();
    if gx >= width || gy >= height || rows[gy][gx] == Cell::Wall {
        return Err(err(gline, 6, format!("goal ({gx}, {gy}) is not an open cell")));
    }
    GridMap::new(name, rows, (gx, gy, gh))
}

/// Outcome distributions `[no effect, once, twice]` for each motion action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionOutcomeModel {
    pub forward: [f64; 3],
    pub left: [f64; 3],
    pub right: [f64; 3],
}

impl ActionOutcomeModel {
    pub fn standard() -> Self {
        ActionOutcomeModel {
            forward: [0.11, 0.88, 0.01],
            left: [0.05, 0.9, 0.05],
            right: [0.05, 0.9, 0.05],
        }
    }

    pub fn noisy() -> Self {
        ActionOutcomeModel {
            forward: [0.2, 0.7, 0.1],
            left: [0.15, 0.7, 0.15],
            right: [0.15, 0.7, 0.15],
        }
    }

    pub fn validate(&self) -> Result<(), NoiseModelError> {
        for (what, d) in [("move-forward", self.forward), ("turn-left", self.left), ("turn-right", self.right)] {
            let sum: f64 = d.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || d.iter().any(|&p| p < 0.0) {
                return Err(NoiseModelError::NotDistribution { what, sum });
            }
        }
        Ok(())
    }
}

/// Reading distribution `[wall, open, doorway, undetermined]` per actual
/// percept `[wall, open, doorway]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub rows: [[f64; 4]; 3],
}

impl SensorModel {
    pub fn standard() -> Self {
        SensorModel {
            rows: [
                [0.90, 0.04, 0.04, 0.02],
                [0.02, 0.90, 0.06, 0.02],
                [0.15, 0.15, 0.69, 0.01],
            ],
        }
    }

    pub fn noisy() -> Self {
        SensorModel {
            rows: [
                [0.70, 0.19, 0.09, 0.02],
                [0.19, 0.70, 0.09, 0.02],
                [0.15, 0.15, 0.69, 0.01],
            ],
        }
    }

    pub fn validate(&self) -> Result<(), NoiseModelError> {
        for (what, row) in ["wall", "open", "doorway"].into_iter().zip(self.rows) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(NoiseModelError::NotDistribution { what, sum });
            }
        }
        Ok(())
    }

    /// Probability of the 3-reading tuple encoded by `o` given actual percepts.
    pub fn tuple_prob(&self, actual: (Percept, Percept, Percept), o: usize) -> f64 {
        let (front, left, right) = (o / 16, (o / 4) % 4, o % 4);
        self.rows[actual.0.index()][front] * self.rows[actual.1.index()][left] * self.rows[actual.2.index()][right]
    }
}

/// A compiled map: the POMDP plus the indices needed to run episodes.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub map: GridMap,
    pub model: Pomdp,
    pub locations: Vec<(usize, usize)>,
    pub goal_state: usize,
    pub terminal_state: usize,
}

impl GridWorld {
    pub fn new(
        map: GridMap,
        outcomes: &ActionOutcomeModel,
        sensors: &SensorModel,
        discount: f64,
    ) -> Result<Self, NoiseModelError> {
        outcomes.validate()?;
        sensors.validate()?;
        let locations = map.locations();
        let model = compile(&map, outcomes, sensors, discount);
        let goal_loc = locations
            .iter()
            .position(|&(x, y)| (x, y) == (map.goal.0, map.goal.1))
            .expect("goal is an open cell");
        Ok(GridWorld {
            goal_state: goal_loc * 4 + map.goal.2.index(),
            terminal_state: locations.len() * 4,
            map,
            model,
            locations,
        })
    }

    /// States other than the terminal.
    pub fn navigation_states(&self) -> std::ops::Range<usize> {
        0..self.terminal_state
    }

    /// Location and heading of a navigation state.
    pub fn pose(&self, s: usize) -> ((usize, usize), Heading) {
        (self.locations[s / 4], Heading::from_index(s % 4))
    }

    pub fn state_of(&self, x: usize, y: usize, h: Heading) -> Option<usize> {
        self.locations.iter().position(|&p| p == (x, y)).map(|l| l * 4 + h.index())
    }
}

/// Actual (front, left, right) percepts of navigation state `s`.
pub fn state_percepts(map: &GridMap, s: usize) -> (Percept, Percept, Percept) {
    let (x, y) = map.locations()[s / 4];
    let h = Heading::from_index(s % 4);
    (map.percept(x, y, h), map.percept(x, y, h.left()), map.percept(x, y, h.right()))
}

fn observation_name(o: usize) -> String {
    [o / 16, (o / 4) % 4, o % 4].iter().map(|&r| READING_LETTERS[r]).collect()
}

/// Compiles a map and noise models into a POMDP with an absorbing terminal.
pub fn compile(map: &GridMap, outcomes: &ActionOutcomeModel, sensors: &SensorModel, discount: f64) -> Pomdp {
    let locations = map.locations();
    let nloc = locations.len();
    let terminal = nloc * 4;
    let ns = terminal + 1;
    let index_of = |(x, y): (usize, usize)| locations.iter().position(|&p| p == (x, y)).unwrap();

    let mut state_names: Vec<String> = locations
        .iter()
        .flat_map(|&(x, y)| Heading::ALL.iter().map(move |h| format!("x{x}y{y}{}", h.letter())))
        .collect();
    state_names.push("terminal".into());
    let mut observation_names: Vec<String> = (0..SENSOR_OBSERVATIONS).map(observation_name).collect();
    observation_names.push("terminal".into());
    let action_names = ACTION_NAMES.iter().map(|s| s.to_string()).collect();

    let mut t = PomdpTables::zeros(state_names, action_names, observation_names, discount);
    let add = |t: &mut PomdpTables, a: usize, s: usize, next: usize, p: f64| {
        let cur = t.transition[(a * ns + s) * ns + next];
        t.set_transition(a, s, next, cur + p);
    };

    for (l, &(x, y)) in locations.iter().enumerate() {
        for h in Heading::ALL {
            let s = l * 4 + h.index();
            // forward: a blocked step leaves the robot where it was
            let one = map.neighbor(x, y, h);
            let two = one.and_then(|(x1, y1)| map.neighbor(x1, y1, h));
            let one_state = one.map_or(s, |p| index_of(p) * 4 + h.index());
            let two_state = two.map_or(one_state, |p| index_of(p) * 4 + h.index());
            add(&mut t, MOVE_FORWARD, s, s, outcomes.forward[0]);
            add(&mut t, MOVE_FORWARD, s, one_state, outcomes.forward[1]);
            add(&mut t, MOVE_FORWARD, s, two_state, outcomes.forward[2]);
            t.set_intended(MOVE_FORWARD, s, one.map(|_| one_state));

            let turn = |g: Heading| l * 4 + g.index();
            add(&mut t, TURN_LEFT, s, s, outcomes.left[0]);
            add(&mut t, TURN_LEFT, s, turn(h.left()), outcomes.left[1]);
            add(&mut t, TURN_LEFT, s, turn(h.left().left()), outcomes.left[2]);
            t.set_intended(TURN_LEFT, s, Some(turn(h.left())));
            add(&mut t, TURN_RIGHT, s, s, outcomes.right[0]);
            add(&mut t, TURN_RIGHT, s, turn(h.right()), outcomes.right[1]);
            add(&mut t, TURN_RIGHT, s, turn(h.right().right()), outcomes.right[2]);
            t.set_intended(TURN_RIGHT, s, Some(turn(h.right())));

            t.set_transition(DECLARE_GOAL, s, terminal, 1.0);
            t.set_intended(DECLARE_GOAL, s, Some(s));
        }
    }
    for a in 0..4 {
        t.set_transition(a, terminal, terminal, 1.0);
    }
    t.set_intended(DECLARE_GOAL, terminal, Some(terminal));

    let goal_state = index_of((map.goal.0, map.goal.1)) * 4 + map.goal.2.index();
    t.set_reward(DECLARE_GOAL, goal_state, 1.0);

    let no = SENSOR_OBSERVATIONS + 1;
    let mut obs = vec![0.0; 4 * ns * no];
    for s in 0..terminal {
        let actual = state_percepts_at(map, &locations, s);
        for o in 0..SENSOR_OBSERVATIONS {
            let p = sensors.tuple_prob(actual, o);
            for a in 0..4 {
                obs[(a * ns + s) * no + o] = p;
            }
        }
    }
    for a in 0..4 {
        obs[(a * ns + terminal) * no + SENSOR_OBSERVATIONS] = 1.0;
    }
    t.observation = ObservationTable::Independent(obs);

    let mut initial = vec![1.0 / terminal as f64; ns];
    initial[terminal] = 0.0;
    t.initial = initial;

    Pomdp::from_tables_unchecked(t).expect("compiled tables have consistent shapes")
}

fn state_percepts_at(map: &GridMap, locations: &[(usize, usize)], s: usize) -> (Percept, Percept, Percept) {
    let (x, y) = locations[s / 4];
    let h = Heading::from_index(s % 4);
    (map.percept(x, y, h), map.percept(x, y, h.left()), map.percept(x, y, h.right()))
}
