// SPDX-License-Identifier: Apache-2.0

use std::ffi::{CStr, CString};
use std::ptr;

use stacked_sim_ffi::*;

fn last_error() -> String {
    let p = sim_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hardware(layers: usize, atoms: usize, users: usize) -> SimHardware {
    let mut hw = std::mem::MaybeUninit::uninit();
    let st = unsafe { sim_config_default(28e9, layers, atoms, users, users, hw.as_mut_ptr()) };
    assert_eq!(st, SimStatus::Ok);
    unsafe { hw.assume_init() }
}

#[test]
fn stack_response_has_expected_shape() {
    let hw = hardware(2, 9, 2);
    let mut stack = ptr::null_mut();
    assert_eq!(unsafe { sim_stack_new(&hw, &mut stack) }, SimStatus::Ok);
    let (mut l, mut n, mut m) = (0, 0, 0);
    assert_eq!(unsafe { sim_stack_dims(stack, &mut l, &mut n, &mut m) }, SimStatus::Ok);
    assert_eq!((l, n, m), (2, 9, 2));

    let phases = vec![0.3; l * n];
    let mut g = vec![0.0; 2 * n * m];
    let st = unsafe { sim_stack_response(stack, phases.as_ptr(), phases.len(), g.as_mut_ptr(), g.len()) };
    assert_eq!(st, SimStatus::Ok);
    assert!(g.iter().all(|x| x.is_finite()));
    assert!(g.iter().any(|&x| x != 0.0));

    let mut short = vec![0.0; 3];
    let st = unsafe { sim_stack_response(stack, phases.as_ptr(), phases.len(), short.as_mut_ptr(), short.len()) };
    assert_eq!(st, SimStatus::DimensionMismatch);
    assert!(!last_error().is_empty());
    unsafe { sim_stack_free(stack) };
}

#[test]
fn null_arguments_are_reported() {
    let mut stack = ptr::null_mut();
    assert_eq!(
        unsafe { sim_stack_new(ptr::null(), &mut stack) },
        SimStatus::NullPointer
    );
    assert!(last_error().contains("config"));
    assert!(stack.is_null());
    unsafe {
        sim_stack_free(ptr::null_mut());
        sim_results_free(ptr::null_mut());
        sim_experiment_free(ptr::null_mut());
        sim_string_free(ptr::null_mut());
        assert_eq!(sim_results_len(ptr::null()), 0);
    }
}

#[test]
fn success_clears_the_last_error() {
    let mut stack = ptr::null_mut();
    unsafe { sim_stack_new(ptr::null(), &mut stack) };
    assert!(!sim_last_error_message().is_null());
    hardware(1, 4, 2);
    assert!(sim_last_error_message().is_null());
}

#[test]
fn invalid_hardware_is_rejected() {
    let mut hw = hardware(1, 4, 2);
    hw.atoms_per_layer = 5;
    let mut stack = ptr::null_mut();
    let st = unsafe { sim_stack_new(&hw, &mut stack) };
    assert_ne!(st, SimStatus::Ok);
    assert!(stack.is_null());
}

#[test]
fn waterfill_spends_the_budget() {
    let gains = [2.0, 1.0, 0.1];
    let interference = [0.0; 3];
    let mut p = [0.0; 3];
    let st = unsafe { sim_waterfill(gains.as_ptr(), interference.as_ptr(), 3, 1.0, 3.0, p.as_mut_ptr()) };
    assert_eq!(st, SimStatus::Ok);
    assert!((p.iter().sum::<f64>() - 3.0).abs() < 1e-9);
    assert!(p[0] >= p[1] && p[1] >= p[2]);
}

#[test]
fn zf_precoder_diagonalizes() {
    // Interleaved 2x3 channel.
    let h = [1.0, 0.0, 0.5, 0.2, 0.0, 1.0, -0.3, 0.1, 1.0, 0.0, 0.4, -0.7];
    let mut f = [0.0; 12];
    assert_eq!(
        unsafe { sim_zf_precoder(h.as_ptr(), 2, 3, f.as_mut_ptr()) },
        SimStatus::Ok
    );
    let at = |m: &[f64], cols: usize, r: usize, c: usize| {
        let i = 2 * (r * cols + c);
        (m[i], m[i + 1])
    };
    for k in 0..2 {
        for j in 0..2 {
            let (mut re, mut im) = (0.0, 0.0);
            for a in 0..3 {
                let (hr, hi) = at(&h, 3, k, a);
                let (fr, fi) = at(&f, 2, a, j);
                re += hr * fr - hi * fi;
                im += hr * fi + hi * fr;
            }
            if k != j {
                assert!(re.hypot(im) < 1e-12, "leak {k}->{j}");
            } else {
                assert!(re.hypot(im) > 1e-3);
            }
        }
    }
}

#[test]
fn sum_rate_of_identity_channel() {
    let b = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let p = [1.0, 3.0];
    let mut r = 0.0;
    assert_eq!(
        unsafe { sim_sum_rate(b.as_ptr(), 2, p.as_ptr(), 1.0, &mut r) },
        SimStatus::Ok
    );
    assert!((r - 3.0).abs() < 1e-12);
}

#[test]
fn sumrate_gradient_matches_finite_difference() {
    let hw = hardware(2, 4, 2);
    let mut stack = ptr::null_mut();
    assert_eq!(unsafe { sim_stack_new(&hw, &mut stack) }, SimStatus::Ok);
    let h: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) * 1e-3).collect();
    let p = [0.5, 0.5];
    let noise = 1e-9;
    let rate = |theta: &[f64]| {
        let mut g = vec![0.0; 2 * 4 * 2];
        unsafe { sim_stack_response(stack, theta.as_ptr(), theta.len(), g.as_mut_ptr(), g.len()) };
        // b = h g, users x users
        let mut b = [0.0; 8];
        for k in 0..2 {
            for j in 0..2 {
                for a in 0..4 {
                    let (hr, hi) = (h[2 * (k * 4 + a)], h[2 * (k * 4 + a) + 1]);
                    let (gr, gi) = (g[2 * (a * 2 + j)], g[2 * (a * 2 + j) + 1]);
                    b[2 * (k * 2 + j)] += hr * gr - hi * gi;
                    b[2 * (k * 2 + j) + 1] += hr * gi + hi * gr;
                }
            }
        }
        let mut r = 0.0;
        unsafe { sim_sum_rate(b.as_ptr(), 2, p.as_ptr(), noise, &mut r) };
        r
    };
    let theta: Vec<f64> = (0..8).map(|i| 0.4 * i as f64).collect();
    let mut grad = vec![0.0; 8];
    let st = unsafe {
        sim_sumrate_gradient(
            stack,
            theta.as_ptr(),
            h.as_ptr(),
            2,
            p.as_ptr(),
            noise,
            grad.as_mut_ptr(),
        )
    };
    assert_eq!(st, SimStatus::Ok);
    for i in 0..8 {
        let (mut up, mut dn) = (theta.clone(), theta.clone());
        up[i] += 1e-6;
        dn[i] -= 1e-6;
        let fd = (rate(&up) - rate(&dn)) / 2e-6;
        assert!(
            (fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1.0),
            "{i}: {fd} vs {}",
            grad[i]
        );
    }
    unsafe { sim_stack_free(stack) };
}

#[test]
fn doa_loss_is_zero_for_a_perfect_readout() {
    let e = [0.0, 0.0, 5.0, 0.0];
    let mut l = 1.0;
    assert_eq!(unsafe { sim_doa_loss(e.as_ptr(), 2, &mut l) }, SimStatus::Ok);
    assert!(l.abs() < 1e-15);
    assert_eq!(
        unsafe { sim_doa_loss(e.as_ptr(), 4, &mut l) },
        SimStatus::InvalidArgument
    );
}

#[test]
fn experiment_runs_and_exports_csv() {
    let toml = CString::new(
        "trials = 2\nlayers = [1, 2]\nschemes = [\"average-pa\", \"zf-4ta\"]\n[sim]\natoms_per_layer = 16\n",
    )
    .unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { sim_experiment_from_toml(SimExperimentKind::Sumrate, toml.as_ptr(), &mut exp) };
    assert_eq!(st, SimStatus::Ok, "{}", last_error());

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { sim_experiment_to_toml(exp, &mut text) }, SimStatus::Ok);
    assert!(unsafe { CStr::from_ptr(text) }.to_str().unwrap().contains("trials = 2"));
    unsafe { sim_string_free(text) };

    let mut res = ptr::null_mut();
    assert_eq!(
        unsafe { sim_experiment_run(exp, 1, &mut res) },
        SimStatus::Ok,
        "{}",
        last_error()
    );
    let n = unsafe { sim_results_len(res) };
    assert_eq!(n, 4);
    let mut row = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { sim_results_row(res, 0, row.as_mut_ptr()) }, SimStatus::Ok);
    let row = unsafe { row.assume_init() };
    assert_eq!(row.layers, 1);
    assert_eq!(row.trials, 2);
    assert_eq!(unsafe { CStr::from_ptr(row.scheme) }.to_str().unwrap(), "average-pa");
    let mut bad = std::mem::MaybeUninit::uninit();
    assert_eq!(
        unsafe { sim_results_row(res, n, bad.as_mut_ptr()) },
        SimStatus::InvalidArgument
    );

    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { sim_results_to_csv(res, &mut csv) }, SimStatus::Ok);
    let s = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    assert!(s.starts_with("L,scheme,metric,mean,stderr,trials,seconds"));
    assert_eq!(s.lines().count(), 5);
    unsafe {
        sim_string_free(csv);
        sim_results_free(res);
        sim_experiment_free(exp);
    }
}

#[test]
fn bad_toml_reports_the_line() {
    let toml = CString::new("trials = 2\nbogus = 1\n").unwrap();
    let mut exp = ptr::null_mut();
    let st = unsafe { sim_experiment_from_toml(SimExperimentKind::Sumrate, toml.as_ptr(), &mut exp) };
    assert_eq!(st, SimStatus::InvalidConfig);
    assert!(exp.is_null());
    assert!(last_error().contains("line 2"), "{}", last_error());
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(sim_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
