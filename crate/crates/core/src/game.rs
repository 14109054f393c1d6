//! Finite normal-form games.
//!
//! Action profiles are flattened row-major with player 0 most significant, so a
//! two-player binary game lays out its profiles as `(0,0), (0,1), (1,0), (1,1)`.

use serde::{Deserialize, Serialize};

use crate::error::{CpdsError, Result};

/// Number of actions available to each decision maker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    sizes: Vec<usize>,
    num_profiles: usize,
}

/// Flat index of an action profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProfileIndex(pub usize);

impl ActionSpace {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(CpdsError::dim("action space needs at least one player"));
        }
        let mut total: usize = 1;
        for (i, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(CpdsError::dim(format!("player {i} has no actions")));
            }
            total = total
                .checked_mul(s)
                .ok_or_else(|| CpdsError::dim("profile count overflows"))?;
        }
        Ok(Self {
            sizes,
            num_profiles: total,
        })
    }

    /// Every player chooses between staying out (0) and entering (1).
    pub fn binary(num_players: usize) -> Result<Self> {
        Self::new(vec![2; num_players])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_players(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_profiles(&self) -> usize {
        self.num_profiles
    }

    pub fn is_binary(&self) -> bool {
        self.sizes.iter().all(|&s| s == 2)
    }

    /// Distance in flat index between consecutive actions of `player`.
    pub fn stride(&self, player: usize) -> usize {
        self.sizes[player + 1..].iter().product()
    }

    pub fn profile_index(&self, tuple: &[usize]) -> Result<ProfileIndex> {
        if tuple.len() != self.sizes.len() {
            return Err(CpdsError::dim(format!(
                "profile has {} entries, expected {}",
                tuple.len(),
                self.sizes.len()
            )));
        }
        let mut index = 0;
        for (i, (&a, &s)) in tuple.iter().zip(&self.sizes).enumerate() {
            if a >= s {
                return Err(CpdsError::dim(format!(
                    "action {a} out of range for player {i} with {s} actions"
                )));
            }
            index = index * s + a;
        }
        Ok(ProfileIndex(index))
    }

    pub fn profile_tuple(&self, profile: ProfileIndex) -> Result<Vec<usize>> {
        if profile.0 >= self.num_profiles {
            return Err(CpdsError::dim(format!(
                "profile index {} out of range ({} profiles)",
                profile.0, self.num_profiles
            )));
        }
        let mut rest = profile.0;
        let mut tuple = vec![0; self.sizes.len()];
        for (slot, &s) in tuple.iter_mut().zip(&self.sizes).rev() {
            *slot = rest % s;
            rest /= s;
        }
        Ok(tuple)
    }

    /// Action of `player` within the flat profile `index`.
    #[inline]
    pub fn action_of(&self, player: usize, index: usize) -> usize {
        (index / self.stride(player)) % self.sizes[player]
    }

    /// All profiles in index order.
    pub fn tuples(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.num_profiles).map(move |k| {
            self.profile_tuple(ProfileIndex(k))
                .expect("index in range by construction")
        })
    }
}

/// A finite game: one utility per player per action profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    actions: ActionSpace,
    /// Player-major: `utility[player * num_profiles + profile]`.
    utility: Vec<f64>,
}

impl Game {
    /// `utility[i][k]` is player i's payoff at profile k.
    pub fn new(actions: ActionSpace, utility: Vec<Vec<f64>>) -> Result<Self> {
        if utility.len() != actions.num_players() {
            return Err(CpdsError::dim(format!(
                "utility has {} rows, expected {}",
                utility.len(),
                actions.num_players()
            )));
        }
        let mut flat = Vec::with_capacity(actions.num_players() * actions.num_profiles());
        for (i, row) in utility.into_iter().enumerate() {
            if row.len() != actions.num_profiles() {
                return Err(CpdsError::dim(format!(
                    "player {i} has {} utilities, expected {}",
                    row.len(),
                    actions.num_profiles()
                )));
            }
            flat.extend(row);
        }
        Self::from_flat(actions, flat)
    }

    pub fn from_flat(actions: ActionSpace, utility: Vec<f64>) -> Result<Self> {
        if utility.len() != actions.num_players() * actions.num_profiles() {
            return Err(CpdsError::dim("flat utility length mismatch"));
        }
        if let Some(pos) = utility.iter().position(|u| !u.is_finite()) {
            return Err(CpdsError::config(format!(
                "non-finite utility at player {}, profile {}",
                pos / actions.num_profiles(),
                pos % actions.num_profiles()
            )));
        }
        Ok(Self { actions, utility })
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn num_players(&self) -> usize {
        self.actions.num_players()
    }

    pub fn num_profiles(&self) -> usize {
        self.actions.num_profiles()
    }

    pub fn payoff(&self, player: usize, profile: ProfileIndex) -> Result<f64> {
        if player >= self.num_players() {
            return Err(CpdsError::dim(format!("no player {player}")));
        }
        if profile.0 >= self.num_profiles() {
            return Err(CpdsError::dim(format!("no profile {}", profile.0)));
        }
        Ok(self.u(player, profile.0))
    }

    #[inline]
    pub(crate) fn u(&self, player: usize, profile: usize) -> f64 {
        self.utility[player * self.actions.num_profiles() + profile]
    }

    pub fn utilities(&self, player: usize) -> &[f64] {
        let n = self.num_profiles();
        &self.utility[player * n..(player + 1) * n]
    }

    pub fn flat_utility(&self) -> &[f64] {
        &self.utility
    }

    /// Adds `c` to every payoff of `player`.
    pub fn translated(&self, player: usize, c: f64) -> Result<Self> {
        self.map_player(player, |u| u + c)
    }

    /// Multiplies every payoff of `player` by `k`.
    pub fn scaled(&self, player: usize, k: f64) -> Result<Self> {
        self.map_player(player, |u| u * k)
    }

    fn map_player(&self, player: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        if player >= self.num_players() {
            return Err(CpdsError::dim(format!("no player {player}")));
        }
        let n = self.num_profiles();
        let mut utility = self.utility.clone();
        for u in &mut utility[player * n..(player + 1) * n] {
            *u = f(*u);
        }
        Self::from_flat(self.actions.clone(), utility)
    }
}

/// Linear entry-game primitives. Payoff of entering is
/// `alpha_i + x_i . beta_i + sum_j delta[i][j] a_j + epsilon_i`; staying out pays 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEntryGameParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub epsilon: Vec<f64>,
}

impl LinearEntryGameParams {
    pub fn num_players(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alpha.len();
        if k == 0 {
            return Err(CpdsError::dim("entry game needs at least one player"));
        }
        if self.beta.len() != k || self.x.len() != k || self.epsilon.len() != k {
            return Err(CpdsError::dim(
                "alpha, beta, x and epsilon must have one entry per player",
            ));
        }
        for i in 0..k {
            if self.beta[i].len() != self.x[i].len() {
                return Err(CpdsError::dim(format!(
                    "player {i}: {} slopes for {} covariates",
                    self.beta[i].len(),
                    self.x[i].len()
                )));
            }
        }
        if self.delta.len() != k || self.delta.iter().any(|r| r.len() != k) {
            return Err(CpdsError::dim(format!("delta must be {k}x{k}")));
        }
        for i in 0..k {
            if self.delta[i][i] != 0.0 {
                return Err(CpdsError::config(format!(
                    "delta[{i}][{i}] must be exactly zero"
                )));
            }
        }
        Ok(())
    }

    /// Payoff from entering before competitive effects.
    pub fn monopoly_payoff(&self, player: usize) -> f64 {
        let xb: f64 = self.x[player]
            .iter()
            .zip(&self.beta[player])
            .map(|(x, b)| x * b)
            .sum();
        self.alpha[player] + xb + self.epsilon[player]
    }

    /// Two-player shorthand: monopoly payoffs `pi` and a symmetric competitive effect.
    pub fn two_player(pi: [f64; 2], delta: f64) -> Self {
        Self {
            alpha: pi.to_vec(),
            beta: vec![vec![], vec![]],
            delta: vec![vec![0.0, delta], vec![delta, 0.0]],
            x: vec![vec![], vec![]],
            epsilon: vec![0.0, 0.0],
        }
    }
}

pub fn build_linear_entry_game(
    actions: &ActionSpace,
    params: &LinearEntryGameParams,
) -> Result<Game> {
    if !actions.is_binary() {
        return Err(CpdsError::Unsupported(
            "linear entry games require binary actions".into(),
        ));
    }
    params.validate()?;
    let k = params.num_players();
    if actions.num_players() != k {
        return Err(CpdsError::dim(format!(
            "{} players in params, {} in action space",
            k,
            actions.num_players()
        )));
    }
    let n = actions.num_profiles();
    let base: Vec<f64> = (0..k).map(|i| params.monopoly_payoff(i)).collect();
    let mut utility = vec![0.0; k * n];
    for profile in 0..n {
        for i in 0..k {
            if actions.action_of(i, profile) == 0 {
                continue;
            }
            let mut u = base[i];
            for j in 0..k {
                if j != i && actions.action_of(j, profile) == 1 {
                    u += params.delta[i][j];
                }
            }
            utility[i * n + profile] = u;
        }
    }
    Game::from_flat(actions.clone(), utility)
}

/// On-disk game description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameFile {
    Tensor {
        sizes: Vec<usize>,
        utility: Vec<Vec<f64>>,
    },
    LinearEntry(LinearEntryGameParams),
}

impl GameFile {
    pub fn into_game(self) -> Result<Game> {
        match self {
            GameFile::Tensor { sizes, utility } => Game::new(ActionSpace::new(sizes)?, utility),
            GameFile::LinearEntry(params) => {
                let actions = ActionSpace::binary(params.num_players())?;
                build_linear_entry_game(&actions, &params)
            }
        }
    }

    pub fn from_game(game: &Game) -> Self {
        GameFile::Tensor {
            sizes: game.actions().sizes().to_vec(),
            utility: (0..game.num_players())
                .map(|i| game.utilities(i).to_vec())
                .collect(),
        }
    }
}

pub fn parse_game(text: &str) -> Result<Game> {
    serde_json::from_str::<GameFile>(text)?.into_game()
}

pub fn load_game(path: &std::path::Path) -> Result<Game> {
    parse_game(&std::fs::read_to_string(path)?)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profile_index_examples() {
        let a = ActionSpace::binary(2).unwrap();
        assert_eq!(a.profile_index(&[0, 0]).unwrap(), ProfileIndex(0));
        assert_eq!(a.profile_index(&[1, 0]).unwrap(), ProfileIndex(2));
        let b = ActionSpace::binary(3).unwrap();
        assert_eq!(b.profile_index(&[1, 1, 1]).unwrap(), ProfileIndex(7));
    }

    #[test]
    fn profile_index_enumeration_is_bijective() {
        let a = ActionSpace::binary(3).unwrap();
        let mut seen = [false; 8];
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    let k = a.profile_index(&[x, y, z]).unwrap().0;
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(a.profile_tuple(ProfileIndex(k)).unwrap(), vec![x, y, z]);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn profile_index_rejects_out_of_range() {
        let a = ActionSpace::new(vec![2, 3]).unwrap();
        assert!(matches!(
            a.profile_index(&[0, 3]),
            Err(CpdsError::Dimension(_))
        ));
        assert!(a.profile_index(&[0]).is_err());
        assert!(a.profile_tuple(ProfileIndex(6)).is_err());
    }

    #[test]
    fn action_space_validation() {
        assert!(ActionSpace::new(vec![]).is_err());
        assert!(ActionSpace::new(vec![2, 0]).is_err());
        assert!(ActionSpace::new(vec![usize::MAX, 2]).is_err());
    }

    #[test]
    fn payoffs_of_canonical_games() {
        let m = g_mult();
        let d = g_dom();
        let a = m.actions().clone();
        let p = |t: &[usize]| a.profile_index(t).unwrap();
        assert_eq!(d.payoff(0, p(&[1, 1])).unwrap(), 0.5);
        assert!((m.payoff(1, p(&[1, 1])).unwrap() - (-0.3)).abs() < 1e-15);
        assert_eq!(m.payoff(0, p(&[1, 0])).unwrap(), 0.6);
        assert!((m.payoff(0, p(&[1, 1])).unwrap() - (-0.4)).abs() < 1e-15);
        assert_eq!(m.payoff(1, p(&[0, 1])).unwrap(), 0.7);
        for g in [&m, &d] {
            for t in a.tuples() {
                for i in 0..2 {
                    if t[i] == 0 {
                        assert_eq!(g.payoff(i, p(&t)).unwrap(), 0.0);
                    }
                }
            }
        }
        for t in a.tuples() {
            for i in 0..2 {
                if t[i] == 1 {
                    assert!(d.payoff(i, p(&t)).unwrap() > 0.0);
                }
            }
        }
        assert!(m.payoff(2, ProfileIndex(0)).is_err());
        assert!(m.payoff(0, ProfileIndex(4)).is_err());
    }

    #[test]
    fn cycle_game_payoffs() {
        let g = g_cycle();
        let a = g.actions().clone();
        for t in a.tuples() {
            let k = a.profile_index(&t).unwrap();
            for i in 0..3 {
                let u = g.payoff(i, k).unwrap();
                let expected = match (t[i], t[(i + 1) % 3]) {
                    (0, _) => 0.0,
                    (1, 0) => 1.0,
                    _ => -1.0,
                };
                assert_eq!(u, expected);
            }
        }
    }

    #[test]
    fn entry_builder_rejects_bad_input() {
        let mut p = LinearEntryGameParams::two_player([1.0, 1.0], -1.0);
        assert!(matches!(
            build_linear_entry_game(&ActionSpace::new(vec![2, 3]).unwrap(), &p),
            Err(CpdsError::Unsupported(_))
        ));
        p.delta[0][0] = 0.1;
        assert!(build_linear_entry_game(&ActionSpace::binary(2).unwrap(), &p).is_err());
        let q = LinearEntryGameParams::two_player([1.0, 1.0], -1.0);
        assert!(build_linear_entry_game(&ActionSpace::binary(3).unwrap(), &q).is_err());
    }

    #[test]
    fn game_file_forms() {
        let t: GameFile = serde_json::from_str(
            r#"{"tensor": {"sizes": [2,2], "utility": [[0,0,1.5,0.5],[0,1.2,0,0.2]]}}"#,
        )
        .unwrap();
        let l: GameFile = serde_json::from_str(
            r#"{"linear_entry": {"alpha": [1.5, 1.2], "beta": [[],[]], "delta": [[0,-1],[-1,0]], "x": [[],[]], "epsilon": [0,0]}}"#,
        )
        .unwrap();
        let gt = t.into_game().unwrap();
        let gl = l.into_game().unwrap();
        for k in 0..4 {
            for i in 0..2 {
                assert!((gt.u(i, k) - gl.u(i, k)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn profile_round_trip(sizes in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            let a = ActionSpace::new(sizes).unwrap();
            let k = (seed as usize) % a.num_profiles();
            let t = a.profile_tuple(ProfileIndex(k)).unwrap();
            prop_assert_eq!(a.profile_index(&t).unwrap(), ProfileIndex(k));
            for (i, &ai) in t.iter().enumerate() {
                prop_assert_eq!(a.action_of(i, k), ai);
            }
        }

        #[test]
        fn swapping_symmetric_players_permutes_utilities(
            pi in -2.0f64..2.0, d in -2.0f64..0.0, x in -1.0f64..1.0, b in -1.0f64..1.0,
        ) {
            let p = LinearEntryGameParams {
                alpha: vec![pi, pi],
                beta: vec![vec![b], vec![b]],
                delta: vec![vec![0.0, d], vec![d, 0.0]],
                x: vec![vec![x], vec![x]],
                epsilon: vec![0.1, 0.1],
            };
            let a = ActionSpace::binary(2).unwrap();
            let g = build_linear_entry_game(&a, &p).unwrap();
            for t in a.tuples() {
                let k = a.profile_index(&t).unwrap().0;
                let swapped = a.profile_index(&[t[1], t[0]]).unwrap().0;
                prop_assert_eq!(g.u(0, k), g.u(1, swapped));
            }
        }
    }
}
