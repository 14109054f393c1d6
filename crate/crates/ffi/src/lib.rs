//! C ABI over the `cpds` library.
//!
//! Every fallible function returns a [`CpdsStatus`]. On failure the message is kept
//! per thread and can be read with [`cpds_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function. Panics never cross the
//! boundary; they are reported as [`CpdsStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cpds::engine::{partial_cpds, CounterfactualSpec, EmptyPolicy, EngineOptions, Mode};
use cpds::error::{CpdsError, ErrorClass};
use cpds::game::{parse_game, ActionSpace, Game, ProfileIndex};
use cpds::identification::{
    credible_set, estimated_identified_set, CredibleRule, QuantityInterval,
};
use cpds::outcome::{draw_bounds, OutcomeSpec};
use cpds::polytope::enumerate_vertices;
use cpds::solution::{
    maximize_over, solution_set, Concept, Direction, LinearFunctional, SolutionSet,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpdsStatus {
    Ok = 0,
    Internal = 1,
    Config = 2,
    Empty = 3,
    Indeterminate = 4,
    NullPointer = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpdsConcept {
    Psne = 0,
    Mixed2x2 = 1,
    Ce = 2,
}

impl From<CpdsConcept> for Concept {
    fn from(c: CpdsConcept) -> Self {
        match c {
            CpdsConcept::Psne => Concept::Psne,
            CpdsConcept::Mixed2x2 => Concept::Mixed2x2,
            CpdsConcept::Ce => Concept::Ce,
        }
    }
}

/// A finite normal-form game.
pub struct CpdsGame(Game);

/// A solution set with its enumerated extreme points.
pub struct CpdsSolutionSet {
    set: SolutionSet,
    vertices: Vec<Vec<f64>>,
}

/// A parsed counterfactual specification.
pub struct CpdsSpec(CounterfactualSpec);

/// Engine settings; a null pointer means Monte Carlo, strict emptiness, 64 partitions.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CpdsEngineOptions {
    pub exact: bool,
    pub record_empty: bool,
    pub partitions: usize,
}

/// Integrated bounds. Event fields are NaN when the spec has no events, and all
/// expectation fields are NaN when every draw was excluded.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CpdsPartialCpds {
    pub e_sup: f64,
    pub e_inf: f64,
    pub p_could: f64,
    pub p_must: f64,
    pub p_cannot: f64,
    pub se_e_sup: f64,
    pub se_e_inf: f64,
    pub se_p_could: f64,
    pub se_p_must: f64,
    pub se_p_cannot: f64,
    pub n_draws: u64,
    pub excluded_draws: u64,
    pub indeterminate_draws: u64,
    pub knife_edge_draws: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

enum Failure {
    Lib(CpdsError),
    Null(&'static str),
}

impl From<CpdsError> for Failure {
    fn from(e: CpdsError) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &CpdsError) -> CpdsStatus {
    match e.class() {
        ErrorClass::Internal => CpdsStatus::Internal,
        ErrorClass::Config => CpdsStatus::Config,
        ErrorClass::Emptiness => CpdsStatus::Empty,
        ErrorClass::Indeterminate => CpdsStatus::Indeterminate,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CpdsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpdsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            CpdsStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            CpdsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| CpdsError::Config(format!("{what} is not UTF-8")).into())
}

fn concept_from(c: c_int) -> Result<Concept, Failure> {
    Ok(match c {
        0 => Concept::Psne,
        1 => Concept::Mixed2x2,
        2 => Concept::Ce,
        _ => return Err(CpdsError::Config(format!("unknown concept code {c}")).into()),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// call into the library from the same thread.
#[no_mangle]
pub extern "C" fn cpds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a game file body (`tensor` or `linear_entry`).
#[no_mangle]
pub unsafe extern "C" fn cpds_game_from_json(
    json: *const c_char,
    out: *mut *mut CpdsGame,
) -> CpdsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let game = parse_game(text(json, "json")?)?;
        *out = Box::into_raw(Box::new(CpdsGame(game)));
        Ok(())
    })
}

/// Builds a game from action counts and a player-major utility array of length
/// `num_players * num_profiles`.
#[no_mangle]
pub unsafe extern "C" fn cpds_game_from_tensor(
    sizes: *const usize,
    num_players: usize,
    utility: *const f64,
    utility_len: usize,
    out: *mut *mut CpdsGame,
) -> CpdsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let actions = ActionSpace::new(slice(sizes, num_players, "sizes")?.to_vec())?;
        let game = Game::from_flat(actions, slice(utility, utility_len, "utility")?.to_vec())?;
        *out = Box::into_raw(Box::new(CpdsGame(game)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpds_game_free(game: *mut CpdsGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cpds_game_num_profiles(
    game: *const CpdsGame,
    out: *mut usize,
) -> CpdsStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(game, "game")?.0.num_profiles();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpds_game_payoff(
    game: *const CpdsGame,
    player: usize,
    profile: usize,
    out: *mut f64,
) -> CpdsStatus {
    guard(|| {
        let g = &deref(game, "game")?.0;
        *out_ref(out, "out")? = g.payoff(player, ProfileIndex(profile))?;
        Ok(())
    })
}

/// Solution set of `game` under `concept` (a [`CpdsConcept`] code).
#[no_mangle]
pub unsafe extern "C" fn cpds_solve(
    game: *const CpdsGame,
    concept: c_int,
    out: *mut *mut CpdsSolutionSet,
) -> CpdsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let g = &deref(game, "game")?.0;
        let (set, _) = solution_set(g, concept_from(concept)?)?;
        let vertices = match &set {
            SolutionSet::Vertices(v) => v.iter().map(|s| s.probs().to_vec()).collect(),
            SolutionSet::Polyhedron { constraints, .. } => {
                enumerate_vertices(constraints, g.num_profiles()).ok_or_else(|| {
                    CpdsError::Unsupported("polytope too large to enumerate".into())
                })?
            }
        };
        *out = Box::into_raw(Box::new(CpdsSolutionSet { set, vertices }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpds_solution_set_free(set: *mut CpdsSolutionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of extreme points (solutions, for finite sets).
#[no_mangle]
pub unsafe extern "C" fn cpds_solution_set_num_vertices(
    set: *const CpdsSolutionSet,
    out: *mut usize,
) -> CpdsStatus {
    guard(|| {
        *out_ref(out, "out")? = deref(set, "set")?.vertices.len();
        Ok(())
    })
}

/// Copies vertex `index` into `out`, which must hold `len` = number of profiles.
#[no_mangle]
pub unsafe extern "C" fn cpds_solution_set_vertex(
    set: *const CpdsSolutionSet,
    index: usize,
    out: *mut f64,
    len: usize,
) -> CpdsStatus {
    guard(|| {
        let s = deref(set, "set")?;
        let v = s
            .vertices
            .get(index)
            .ok_or_else(|| CpdsError::Config(format!("vertex {index} out of range")))?;
        if len != v.len() {
            return Err(CpdsError::Dimension(format!(
                "buffer holds {len}, vertex has {}",
                v.len()
            ))
            .into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v);
        Ok(())
    })
}

/// Optimizes `coeffs . s` over the set. `argopt` may be null; otherwise it receives
/// `len` probabilities.
#[no_mangle]
pub unsafe extern "C" fn cpds_maximize(
    set: *const CpdsSolutionSet,
    coeffs: *const f64,
    len: usize,
    maximize: bool,
    value: *mut f64,
    argopt: *mut f64,
) -> CpdsStatus {
    guard(|| {
        let s = deref(set, "set")?;
        let value = out_ref(value, "value")?;
        let f = LinearFunctional::new(slice(coeffs, len, "coeffs")?.to_vec(), 0.0)?;
        let dir = if maximize {
            Direction::Max
        } else {
            Direction::Min
        };
        let (v, sol) = maximize_over(&s.set, &f, dir)?;
        *value = v;
        if !argopt.is_null() {
            std::slice::from_raw_parts_mut(argopt, len).copy_from_slice(sol.probs());
        }
        Ok(())
    })
}

/// Smallest and largest outcome over the solution set of one game. `outcome_json`
/// is an outcome such as `"expected_entrants"`.
#[no_mangle]
pub unsafe extern "C" fn cpds_draw_bounds(
    game: *const CpdsGame,
    concept: c_int,
    outcome_json: *const c_char,
    lo: *mut f64,
    hi: *mut f64,
) -> CpdsStatus {
    guard(|| {
        let g = &deref(game, "game")?.0;
        let spec: OutcomeSpec = serde_json_from(text(outcome_json, "outcome_json")?)?;
        let lo = out_ref(lo, "lo")?;
        let hi = out_ref(hi, "hi")?;
        let o = draw_bounds(g, concept_from(concept)?, &spec)?;
        *lo = o.lo;
        *hi = o.hi;
        Ok(())
    })
}

fn serde_json_from<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, CpdsError> {
    Ok(serde_json::from_str(s)?)
}

#[no_mangle]
pub unsafe extern "C" fn cpds_spec_from_json(
    json: *const c_char,
    out: *mut *mut CpdsSpec,
) -> CpdsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let spec = CounterfactualSpec::from_json(text(json, "json")?)?;
        *out = Box::into_raw(Box::new(CpdsSpec(spec)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpds_spec_free(spec: *mut CpdsSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Bounds and event probabilities at `theta`. `options` may be null.
#[no_mangle]
pub unsafe extern "C" fn cpds_partial_cpds(
    spec: *const CpdsSpec,
    theta: *const f64,
    theta_len: usize,
    n: u64,
    seed: u64,
    options: *const CpdsEngineOptions,
    out: *mut CpdsPartialCpds,
) -> CpdsStatus {
    guard(|| {
        let spec = &deref(spec, "spec")?.0;
        let out = out_ref(out, "out")?;
        let theta = slice(theta, theta_len, "theta")?;
        let mut opts = EngineOptions::default();
        if let Some(o) = options.as_ref() {
            opts.mode = if o.exact {
                Mode::Exact
            } else {
                Mode::MonteCarlo
            };
            opts.empty = if o.record_empty {
                EmptyPolicy::RecordEmpty
            } else {
                EmptyPolicy::Strict
            };
            if o.partitions == 0 {
                return Err(CpdsError::Config("partitions must be positive".into()).into());
            }
            opts.partitions = o.partitions;
        }
        let r = partial_cpds(spec, theta, n, seed, &opts)?;
        let nan = f64::NAN;
        *out = CpdsPartialCpds {
            e_sup: r.e_sup,
            e_inf: r.e_inf,
            p_could: r.p_could.unwrap_or(nan),
            p_must: r.p_must.unwrap_or(nan),
            p_cannot: r.p_cannot.unwrap_or(nan),
            se_e_sup: r.mc_stderr.e_sup,
            se_e_inf: r.mc_stderr.e_inf,
            se_p_could: r.mc_stderr.p_could.unwrap_or(nan),
            se_p_must: r.mc_stderr.p_must.unwrap_or(nan),
            se_p_cannot: r.mc_stderr.p_cannot.unwrap_or(nan),
            n_draws: r.n_draws,
            excluded_draws: r.excluded_draws,
            indeterminate_draws: r.indeterminate_draws,
            knife_edge_draws: r.knife_edge_draws,
        };
        Ok(())
    })
}

unsafe fn intervals(
    lo: *const f64,
    hi: *const f64,
    len: usize,
) -> Result<Vec<QuantityInterval>, Failure> {
    let lo = slice(lo, len, "lo")?;
    let hi = slice(hi, len, "hi")?;
    Ok(lo
        .iter()
        .zip(hi)
        .map(|(&l, &h)| QuantityInterval::new(l, h))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Mean lower and upper endpoint of `len` intervals.
#[no_mangle]
pub unsafe extern "C" fn cpds_estimated_set(
    lo: *const f64,
    hi: *const f64,
    len: usize,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> CpdsStatus {
    guard(|| {
        let r = estimated_identified_set(&intervals(lo, hi, len)?)?;
        *out_ref(out_lo, "out_lo")? = r.lo;
        *out_ref(out_hi, "out_hi")? = r.hi;
        Ok(())
    })
}

/// Envelope of the narrowest `ceil(level * len)` intervals.
#[no_mangle]
pub unsafe extern "C" fn cpds_credible_set(
    lo: *const f64,
    hi: *const f64,
    len: usize,
    level: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> CpdsStatus {
    guard(|| {
        let r = credible_set(&intervals(lo, hi, len)?, level, CredibleRule::WidthRank)?;
        *out_ref(out_lo, "out_lo")? = r.lo;
        *out_ref(out_hi, "out_hi")? = r.hi;
        Ok(())
    })
}
