//! Exact Shapley values for small cooperative games.
//!
//! Coalitions are bitmasks over the player list (bit `i` = player `i`).
//! Characteristic values are memoized, so each coalition is evaluated at most
//! once no matter which method, or how many methods, run on a game.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{macro_average, RecipeEvaluator};
use crate::weightgrid::Recipe;

pub type Coalition = u32;

pub const MAX_PLAYERS_PERMUTATION: usize = 12;
pub const MAX_PLAYERS_SUBSET: usize = 20;
pub const MAX_GROUP_SIZE: usize = 3;

type Characteristic<'a> = Box<dyn Fn(Coalition) -> Result<f64> + Send + Sync + 'a>;
type Slot = Arc<Mutex<Option<f64>>>;

pub struct CooperativeGame<'a> {
    players: Vec<String>,
    characteristic: Characteristic<'a>,
    memo: Mutex<HashMap<Coalition, Slot>>,
    evaluations: AtomicUsize,
}

impl<'a> CooperativeGame<'a> {
    pub fn new(
        players: Vec<String>,
        characteristic: impl Fn(Coalition) -> Result<f64> + Send + Sync + 'a,
    ) -> Result<Self> {
        if players.len() > MAX_PLAYERS_SUBSET {
            return Err(Error::InvalidArgument(format!(
                "{} players exceeds the limit of {MAX_PLAYERS_SUBSET}",
                players.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &players {
            if !seen.insert(p.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "player",
                    id: p.clone(),
                });
            }
        }
        Ok(Self {
            players,
            characteristic: Box::new(characteristic),
            memo: Mutex::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
        })
    }

    /// Game given by an explicit coalition -> value table.
    pub fn from_table(players: Vec<String>, values: HashMap<Coalition, f64>) -> Result<Self> {
        let labels: Vec<String> = players.clone();
        Self::new(players, move |c| {
            values.get(&c).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no value for coalition {}",
                    label(&labels, c)
                ))
            })
        })
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn grand_coalition(&self) -> Coalition {
        if self.players.is_empty() {
            0
        } else {
            u32::MAX >> (32 - self.players.len())
        }
    }

    /// Number of characteristic-function calls made so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn label(&self, c: Coalition) -> String {
        label(&self.players, c)
    }

    pub fn value(&self, c: Coalition) -> Result<f64> {
        let slot = {
            let mut memo = self.memo.lock().unwrap();
            Arc::clone(memo.entry(c).or_default())
        };
        let mut guard = slot.lock().unwrap();
        if let Some(v) = *guard {
            return Ok(v);
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let v = (self.characteristic)(c)?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coalition {} has non-finite value {v}",
                self.label(c)
            )));
        }
        *guard = Some(v);
        Ok(v)
    }

    /// Values of all `2^n` coalitions, indexed by bitmask.
    pub fn table(&self) -> Result<Vec<f64>> {
        let size = 1usize << self.n();
        let values: Vec<Result<f64>> = (0..size)
            .into_par_iter()
            .map(|c| self.value(c as Coalition))
            .collect();
        values.into_iter().collect()
    }
}

fn label(players: &[String], c: Coalition) -> String {
    let members: Vec<&str> = players
        .iter()
        .enumerate()
        .filter(|(i, _)| c & (1 << i) != 0)
        .map(|(_, p)| p.as_str())
        .collect();
    format!("{{{}}}", members.join(", "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapleyMethod {
    Permutation,
    Subset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub players: Vec<String>,
    pub values: IndexMap<String, f64>,
    pub coalition_values: IndexMap<String, f64>,
    pub grand_value: f64,
    pub empty_value: f64,
    pub method: ShapleyMethod,
}

impl ShapleyReport {
    fn build(game: &CooperativeGame<'_>, table: &[f64], phi: Vec<f64>, method: ShapleyMethod) -> Self {
        Self {
            players: game.players.clone(),
            values: game.players.iter().cloned().zip(phi).collect(),
            coalition_values: table
                .iter()
                .enumerate()
                .map(|(c, v)| (game.label(c as Coalition), *v))
                .collect(),
            grand_value: table[game.grand_coalition() as usize],
            empty_value: table[0],
            method,
        }
    }

    pub fn render_table(&self) -> String {
        let width = self.players.iter().map(|p| p.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>12}\n", "player", "shapley");
        for (p, v) in &self.values {
            out.push_str(&format!("{p:<width$}  {v:>12.6}\n"));
        }
        out.push_str(&format!("{:<width$}  {:>12.6}\n", "v(all)", self.grand_value));
        out
    }
}

/// Average marginal contribution over all `n!` join orders.
pub fn shapley_permutation(game: &CooperativeGame<'_>) -> Result<ShapleyReport> {
    let n = game.n();
    if n > MAX_PLAYERS_PERMUTATION {
        return Err(Error::InvalidArgument(format!(
            "permutation method limited to {MAX_PLAYERS_PERMUTATION} players, got {n}"
        )));
    }
    let table = game.table()?;
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    loop {
        let mut pred: Coalition = 0;
        for &p in &order {
            let with = pred | (1 << p);
            phi[p] += table[with as usize] - table[pred as usize];
            pred = with;
        }
        count += 1;
        if !next_permutation(&mut order) {
            break;
        }
    }
    for v in &mut phi {
        *v /= count as f64;
    }
    Ok(ShapleyReport::build(game, &table, phi, ShapleyMethod::Permutation))
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// `phi_i = sum_{C not containing i} |C|! (n-|C|-1)! / n! * (v(C+i) - v(C))`.
pub fn shapley_subset(game: &CooperativeGame<'_>) -> Result<ShapleyReport> {
    let n = game.n();
    if n > MAX_PLAYERS_SUBSET {
        return Err(Error::InvalidArgument(format!(
            "subset method limited to {MAX_PLAYERS_SUBSET} players, got {n}"
        )));
    }
    let table = game.table()?;
    let coefficients: Vec<f64> = (0..n)
        .map(|s| {
            let c = Ratio::new(factorial(s) * factorial(n - s - 1), factorial(n));
            *c.numer() as f64 / *c.denom() as f64
        })
        .collect();
    let phi = (0..n)
        .map(|i| {
            let bit: Coalition = 1 << i;
            (0..table.len() as Coalition)
                .filter(|c| c & bit == 0)
                .map(|c| {
                    coefficients[c.count_ones() as usize]
                        * (table[(c | bit) as usize] - table[c as usize])
                })
                .sum()
        })
        .collect();
    Ok(ShapleyReport::build(game, &table, phi, ShapleyMethod::Subset))
}

pub fn shapley(game: &CooperativeGame<'_>, method: ShapleyMethod) -> Result<ShapleyReport> {
    match method {
        ShapleyMethod::Permutation => shapley_permutation(game),
        ShapleyMethod::Subset => shapley_subset(game),
    }
}

/// Display id of a model group, e.g. `"M1+M2"`.
pub fn group_id(group: &[String]) -> String {
    group.join("+")
}

/// Game whose coalition value is the macro score of the uniform soup over the
/// union of the coalition's model groups; `v(empty) = 0`.
pub fn souping_game<'a>(
    groups: Vec<Vec<String>>,
    evaluator: &'a dyn RecipeEvaluator,
) -> Result<CooperativeGame<'a>> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() || g.len() > MAX_GROUP_SIZE {
            return Err(Error::InvalidArgument(format!(
                "player {i} has {} models; groups hold 1 to {MAX_GROUP_SIZE}",
                g.len()
            )));
        }
        for m in g {
            if !evaluator.has_model(m) {
                return Err(Error::Unknown {
                    kind: "model",
                    id: m.clone(),
                });
            }
            if let Some(prev) = owner.insert(m.as_str(), i) {
                return Err(Error::InvalidArgument(format!(
                    "model {m:?} appears in players {prev} and {i}"
                )));
            }
        }
    }
    let players: Vec<String> = groups.iter().map(|g| group_id(g)).collect();
    let labels = players.clone();
    CooperativeGame::new(players, move |c| {
        if c == 0 {
            return Ok(0.0);
        }
        let members: Vec<String> = groups
            .iter()
            .enumerate()
            .filter(|(i, _)| c & (1 << i) != 0)
            .flat_map(|(_, g)| g.iter().cloned())
            .collect();
        Recipe::uniform(&members)
            .and_then(|r| evaluator.evaluate(&r))
            .and_then(|s| macro_average(&s))
            .map_err(|e| Error::CoalitionEvaluation {
                coalition: label(&labels, c),
                source: Box::new(e),
            })
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoalitionValue {
    pub members: Vec<String>,
    pub value: f64,
}

/// Explicit game file: players plus listed coalition values. The empty
/// coalition defaults to 0 when not listed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameSpec {
    pub players: Vec<String>,
    pub coalitions: Vec<CoalitionValue>,
}

impl GameSpec {
    pub fn into_game(self) -> Result<CooperativeGame<'static>> {
        let index: HashMap<&str, usize> = self
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let mut values = HashMap::from([(0, 0.0)]);
        for cv in &self.coalitions {
            let mut c: Coalition = 0;
            for m in &cv.members {
                let i = index.get(m.as_str()).ok_or_else(|| Error::Unknown {
                    kind: "player",
                    id: m.clone(),
                })?;
                c |= 1 << i;
            }
            values.insert(c, cv.value);
        }
        CooperativeGame::from_table(self.players, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    fn hand_game() -> CooperativeGame<'static> {
        CooperativeGame::from_table(
            names(2),
            HashMap::from([(0, 0.0), (1, 1.0), (2, 2.0), (3, 4.0)]),
        )
        .unwrap()
    }

    #[test]
    fn hand_game_both_methods() {
        let g = hand_game();
        for r in [shapley_permutation(&g).unwrap(), shapley_subset(&g).unwrap()] {
            assert_eq!(r.values["1"], 1.5);
            assert_eq!(r.values["2"], 2.5);
            assert_eq!(r.grand_value, 4.0);
        }
        assert_eq!(g.evaluations(), 4);
    }

    #[test]
    fn additive_game() {
        let c = [3.0, -1.0, 0.5, 7.25];
        let g = CooperativeGame::new(names(4), |m| {
            Ok((0..4).filter(|i| m & (1 << i) != 0).map(|i| c[i]).sum())
        })
        .unwrap();
        let r = shapley_permutation(&g).unwrap();
        for (i, p) in g.players().iter().enumerate() {
            assert_eq!(r.values[p], c[i]);
        }
    }

    #[test]
    fn symmetric_square_game() {
        // brute force over the 6 orders: each player's marginals sum to 18
        let g = CooperativeGame::new(names(3), |m| Ok((m.count_ones() as f64).powi(2))).unwrap();
        let r = shapley_permutation(&g).unwrap();
        for v in r.values.values() {
            assert!((v - 3.0).abs() < 1e-12);
        }
        let s = shapley_subset(&g).unwrap();
        for v in s.values.values() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_player() {
        let g = CooperativeGame::new(names(3), |m| Ok(if m & 0b011 == 0b011 { 5.0 } else { 1.0 }))
            .unwrap();
        let r = shapley_subset(&g).unwrap();
        assert!(r.values["3"].abs() < 1e-12);
    }

    #[test]
    fn limits_and_errors() {
        let g = CooperativeGame::new(names(13), |_| Ok(0.0)).unwrap();
        assert!(shapley_permutation(&g).is_err());
        assert_eq!(g.evaluations(), 0);
        assert!(CooperativeGame::new(names(21), |_| Ok(0.0)).is_err());
        let missing = CooperativeGame::from_table(names(2), HashMap::from([(0, 0.0)])).unwrap();
        assert!(shapley_subset(&missing).is_err());
        let nan = CooperativeGame::new(names(1), |_| Ok(f64::NAN)).unwrap();
        assert!(shapley_subset(&nan).is_err());
        let dup = CooperativeGame::new(vec!["a".into(), "a".into()], |_| Ok(0.0));
        assert!(dup.is_err());
    }

    #[test]
    fn memo_shared_across_methods() {
        let g = CooperativeGame::new(names(4), |m| Ok(m as f64)).unwrap();
        shapley_permutation(&g).unwrap();
        shapley_subset(&g).unwrap();
        assert_eq!(g.evaluations(), 16);
    }

    #[test]
    fn game_spec() {
        let spec: GameSpec = serde_json::from_str(
            r#"{"players":["1","2"],"coalitions":[
                {"members":["1"],"value":1},{"members":["2"],"value":2},
                {"members":["1","2"],"value":4}]}"#,
        )
        .unwrap();
        let r = shapley_permutation(&spec.into_game().unwrap()).unwrap();
        assert_eq!(r.values["1"], 1.5);
        assert_eq!(r.coalition_values["{}"], 0.0);
        assert_eq!(r.coalition_values["{1, 2}"], 4.0);
    }

    #[test]
    fn permutations_enumerated() {
        let mut v = vec![0, 1, 2, 3];
        let mut n = 1;
        while next_permutation(&mut v) {
            n += 1;
        }
        assert_eq!(n, 24);
        assert_eq!(v, vec![3, 2, 1, 0]);
    }
}
