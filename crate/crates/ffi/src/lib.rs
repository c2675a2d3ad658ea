// SPDX-License-Identifier: Apache-2.0

//! C interface to the stacked-sim simulator.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_from_*` functions and released with the matching `*_free`. Every
//! fallible function returns a [`SimStatus`]; on failure the message is kept
//! per thread and can be read with [`sim_last_error_message`].
//!
//! Complex matrices are passed as interleaved `(re, im)` doubles in row-major
//! order, so a `rows x cols` matrix occupies `2 * rows * cols` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use stacked_sim::beamforming::{self, PowerAllocation};
use stacked_sim::doa;
use stacked_sim::geometry::{build_sim_geometry, PhaseLevels, SimConfig};
use stacked_sim::harness::{self, ExperimentKind, ExperimentSpec, ResultRow};
use stacked_sim::linalg::{CMatrix, C64};
use stacked_sim::propagation::{build_transfer_stack, sim_response, PhaseState, TransferStack};
use stacked_sim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimExperimentKind {
    Sumrate = 0,
    Doa = 1,
}

/// Hardware description. Fill with [`sim_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SimHardware {
    pub carrier_frequency: f64,
    pub num_layers: usize,
    pub atoms_per_layer: usize,
    pub num_antennas: usize,
    pub num_users: usize,
    pub sim_thickness: f64,
    pub element_spacing: f64,
    pub atom_area: f64,
    pub bs_height: f64,
    /// 0 for continuous phases, otherwise the number of levels.
    pub phase_levels: u32,
}

impl From<&SimHardware> for SimConfig {
    fn from(c: &SimHardware) -> Self {
        SimConfig {
            carrier_frequency: c.carrier_frequency,
            num_layers: c.num_layers,
            atoms_per_layer: c.atoms_per_layer,
            num_antennas: c.num_antennas,
            num_users: c.num_users,
            sim_thickness: c.sim_thickness,
            element_spacing: c.element_spacing,
            atom_area: c.atom_area,
            bs_height: c.bs_height,
            phase_levels: match c.phase_levels {
                0 => PhaseLevels::Continuous,
                n => PhaseLevels::Discrete(n),
            },
        }
    }
}

/// One result row. `scheme` and `metric` point into the owning results
/// object and stay valid until it is freed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SimResultRow {
    pub layers: usize,
    pub scheme: *const c_char,
    pub metric: *const c_char,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seconds: f64,
}

/// Inter-layer transfer matrices of one SIM.
pub struct SimStack {
    stack: TransferStack,
}

/// A resolved experiment description.
pub struct SimExperiment {
    spec: ExperimentSpec,
}

/// Rows produced by [`sim_experiment_run`].
pub struct SimResults {
    rows: Vec<ResultRow>,
    names: Vec<(CString, CString)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SimStatus {
    match e {
        Error::InvalidConfig(_) => SimStatus::InvalidConfig,
        Error::DimensionMismatch(_) => SimStatus::DimensionMismatch,
        Error::Numerical(_) => SimStatus::Numerical,
        Error::Io { .. } => SimStatus::Io,
        _ => SimStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Sim(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Sim(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SimStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is NULL"));
            SimStatus::NullPointer
        }
        Ok(Err(Failure::Sim(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SimStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Sim(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<CMatrix, Error> {
    if data.len() != 2 * rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} doubles cannot hold a {rows}x{cols} complex matrix",
            data.len()
        )));
    }
    CMatrix::from_vec(rows, cols, data.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

fn write_matrix(m: &CMatrix, out: &mut [f64]) -> Result<(), Error> {
    if out.len() != 2 * m.rows() * m.cols() {
        return Err(Error::DimensionMismatch(format!(
            "output holds {} doubles, need {}",
            out.len(),
            2 * m.rows() * m.cols()
        )));
    }
    for (o, z) in out.chunks_exact_mut(2).zip(m.as_slice()) {
        o[0] = z.re;
        o[1] = z.im;
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default hardware for the given carrier and sizes.
///
/// # Safety
/// `out` must point to writable memory for one `SimHardware`.
#[no_mangle]
pub unsafe extern "C" fn sim_config_default(
    carrier_frequency: f64,
    num_layers: usize,
    atoms_per_layer: usize,
    num_antennas: usize,
    num_users: usize,
    out: *mut SimHardware,
) -> SimStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let c = SimConfig::new(carrier_frequency, num_layers, atoms_per_layer, num_antennas, num_users);
        *out = SimHardware {
            carrier_frequency: c.carrier_frequency,
            num_layers: c.num_layers,
            atoms_per_layer: c.atoms_per_layer,
            num_antennas: c.num_antennas,
            num_users: c.num_users,
            sim_thickness: c.sim_thickness,
            element_spacing: c.element_spacing,
            atom_area: c.atom_area,
            bs_height: c.bs_height,
            phase_levels: 0,
        };
        Ok(())
    })
}

/// Builds the geometry and transfer matrices for `config`.
///
/// # Safety
/// `config` must be valid to read; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_stack_new(config: *const SimHardware, out: *mut *mut SimStack) -> SimStatus {
    guard(|| {
        let cfg = SimConfig::from(deref(config, "config")?);
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let stack = build_transfer_stack(&build_sim_geometry(&cfg)?, &cfg)?;
        *out = Box::into_raw(Box::new(SimStack { stack }));
        Ok(())
    })
}

/// # Safety
/// `stack` must come from [`sim_stack_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sim_stack_free(stack: *mut SimStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// # Safety
/// `stack` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_stack_dims(
    stack: *const SimStack,
    layers: *mut usize,
    atoms: *mut usize,
    antennas: *mut usize,
) -> SimStatus {
    guard(|| {
        let s = &deref(stack, "stack")?.stack;
        *layers.as_mut().ok_or(Failure::Null("layers"))? = s.num_layers();
        *atoms.as_mut().ok_or(Failure::Null("atoms"))? = s.atoms_per_layer();
        *antennas.as_mut().ok_or(Failure::Null("antennas"))? = s.num_antennas();
        Ok(())
    })
}

/// End-to-end response `G` (atoms x antennas) for `layers * atoms` phases
/// in layer-major order.
///
/// # Safety
/// `phases` must hold `num_phases` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_stack_response(
    stack: *const SimStack,
    phases: *const f64,
    num_phases: usize,
    out: *mut f64,
    out_len: usize,
) -> SimStatus {
    guard(|| {
        let s = &deref(stack, "stack")?.stack;
        let theta = input(phases, num_phases, "phases")?;
        let out = output(out, out_len, "out")?;
        let p = PhaseState::from_vec(s.num_layers(), s.atoms_per_layer(), theta.to_vec())?;
        write_matrix(&sim_response(s, &p)?, out)?;
        Ok(())
    })
}

/// Sum-rate in bps/Hz of the `users x users` effective matrix `b`.
///
/// # Safety
/// `b` must hold `2 * users * users` doubles, `powers` `users` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_sum_rate(
    b: *const f64,
    users: usize,
    powers: *const f64,
    noise: f64,
    out: *mut f64,
) -> SimStatus {
    guard(|| {
        let b = matrix(input(b, 2 * users * users, "b")?, users, users)?;
        let p = input(powers, users, "powers")?.to_vec();
        let total = p.iter().sum();
        let r = beamforming::sum_rate(&b, &PowerAllocation { p, total_budget: total }, noise)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = r.sum_rate;
        Ok(())
    })
}

/// Gradient of the sum-rate with respect to every phase.
///
/// # Safety
/// `phases` and `grad` hold `layers * atoms` doubles, `h` holds
/// `2 * users * atoms` doubles and `powers` `users` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_sumrate_gradient(
    stack: *const SimStack,
    phases: *const f64,
    h: *const f64,
    users: usize,
    powers: *const f64,
    noise: f64,
    grad: *mut f64,
) -> SimStatus {
    guard(|| {
        let s = &deref(stack, "stack")?.stack;
        let n = s.num_layers() * s.atoms_per_layer();
        let p = PhaseState::from_vec(
            s.num_layers(),
            s.atoms_per_layer(),
            input(phases, n, "phases")?.to_vec(),
        )?;
        let h = matrix(
            input(h, 2 * users * s.atoms_per_layer(), "h")?,
            users,
            s.atoms_per_layer(),
        )?;
        let pw = input(powers, users, "powers")?.to_vec();
        let total = pw.iter().sum();
        let g = beamforming::sumrate_gradient(
            s,
            &p,
            &h,
            &PowerAllocation {
                p: pw,
                total_budget: total,
            },
            noise,
        )?;
        output(grad, n, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// One water-filling step over `k` channels.
///
/// # Safety
/// `gains`, `interference` and `out` each hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_waterfill(
    gains: *const f64,
    interference: *const f64,
    k: usize,
    noise: f64,
    budget: f64,
    out: *mut f64,
) -> SimStatus {
    guard(|| {
        let pa = beamforming::waterfill(
            input(gains, k, "gains")?,
            input(interference, k, "interference")?,
            noise,
            budget,
        )?;
        output(out, k, "out")?.copy_from_slice(&pa.p);
        Ok(())
    })
}

/// Column-normalized zero-forcing precoder (`antennas x users`) for the
/// `users x antennas` channel `h`.
///
/// # Safety
/// `h` and `out` each hold `2 * users * antennas` doubles.
#[no_mangle]
pub unsafe extern "C" fn sim_zf_precoder(h: *const f64, users: usize, antennas: usize, out: *mut f64) -> SimStatus {
    guard(|| {
        let h = matrix(input(h, 2 * users * antennas, "h")?, users, antennas)?;
        let f = beamforming::zf_precoder(&h)?;
        write_matrix(&f, output(out, 2 * users * antennas, "out")?)?;
        Ok(())
    })
}

/// Normalized-energy classification loss for one readout.
///
/// # Safety
/// `energies` holds 4 doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sim_doa_loss(energies: *const f64, target_antenna: usize, out: *mut f64) -> SimStatus {
    guard(|| {
        let e = input(energies, 4, "energies")?;
        let e: [f64; 4] = e.try_into().expect("four entries");
        if target_antenna >= 4 {
            return Err(Error::InvalidArgument(format!("antenna {target_antenna} out of range")).into());
        }
        *out.as_mut().ok_or(Failure::Null("out"))? = doa::doa_loss(&e, target_antenna)?;
        Ok(())
    })
}

/// Parses a TOML experiment description (empty text gives the defaults).
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_experiment_from_toml(
    kind: SimExperimentKind,
    toml: *const c_char,
    out: *mut *mut SimExperiment,
) -> SimStatus {
    guard(|| {
        let text = text(toml, "toml")?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let kind = match kind {
            SimExperimentKind::Sumrate => ExperimentKind::Sumrate,
            SimExperimentKind::Doa => ExperimentKind::Doa,
        };
        let spec = ExperimentSpec::from_toml(text, kind, &Default::default()).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(SimExperiment { spec }));
        Ok(())
    })
}

/// # Safety
/// `exp` must come from [`sim_experiment_from_toml`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sim_experiment_free(exp: *mut SimExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Resolved experiment as TOML; release with [`sim_string_free`].
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_experiment_to_toml(exp: *const SimExperiment, out: *mut *mut c_char) -> SimStatus {
    guard(|| {
        let spec = &deref(exp, "experiment")?.spec;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = CString::new(spec.to_toml()).expect("no NUL").into_raw();
        Ok(())
    })
}

/// Runs the experiment on `threads` workers (0 = all cores).
///
/// # Safety
/// `exp` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_experiment_run(
    exp: *const SimExperiment,
    threads: usize,
    out: *mut *mut SimResults,
) -> SimStatus {
    guard(|| {
        let spec = &deref(exp, "experiment")?.spec;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let rows = harness::with_threads(threads, || harness::run_experiment(spec))??;
        let names = rows
            .iter()
            .map(|r| {
                (
                    CString::new(r.scheme.clone()).expect("no NUL"),
                    CString::new(r.metric.clone()).expect("no NUL"),
                )
            })
            .collect();
        *out = Box::into_raw(Box::new(SimResults { rows, names }));
        Ok(())
    })
}

/// # Safety
/// `results` must come from [`sim_experiment_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sim_results_free(results: *mut SimResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `results` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sim_results_len(results: *const SimResults) -> usize {
    results.as_ref().map_or(0, |r| r.rows.len())
}

/// # Safety
/// `results` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_results_row(
    results: *const SimResults,
    index: usize,
    out: *mut SimResultRow,
) -> SimStatus {
    guard(|| {
        let r = deref(results, "results")?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let row = r
            .rows
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("row {index} of {}", r.rows.len())))?;
        let (scheme, metric) = &r.names[index];
        *out = SimResultRow {
            layers: row.layers,
            scheme: scheme.as_ptr(),
            metric: metric.as_ptr(),
            mean: row.mean,
            stderr: row.stderr,
            trials: row.trials,
            seconds: row.seconds,
        };
        Ok(())
    })
}

/// Rows as CSV text; release with [`sim_string_free`].
///
/// # Safety
/// `results` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_results_to_csv(results: *const SimResults, out: *mut *mut c_char) -> SimStatus {
    guard(|| {
        let r = deref(results, "results")?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = CString::new(harness::to_csv(&r.rows)).expect("no NUL").into_raw();
        Ok(())
    })
}
