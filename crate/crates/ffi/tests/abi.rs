use std::ffi::{CStr, CString};
use std::ptr;

use dualsolve_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ds_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn sample_matches_the_rust_api() {
    unsafe {
        let mut params = ptr::null_mut();
        assert_eq!(
            ds_params_default(4, c("ot").as_ptr(), c("p1c2").as_ptr(), &mut params),
            DsStatus::Ok
        );
        assert_eq!(ds_params_steps(params), 4);
        let mut model = ptr::null_mut();
        let mean = [0.5];
        assert_eq!(ds_model_gaussian(mean.as_ptr(), 1, 0.8, &mut model), DsStatus::Ok);
        assert_eq!(ds_model_dim(model), 1);

        let mut x = [0.0; 6];
        assert_eq!(ds_initial_noise(params, 1, 6, 7, x.as_mut_ptr()), DsStatus::Ok);
        let mut out = [0.0; 6];
        let st = ds_sample(
            params,
            model,
            ptr::null(),
            1.0,
            x.as_ptr(),
            ptr::null(),
            6,
            out.as_mut_ptr(),
        );
        assert_eq!(st, DsStatus::Ok);

        let spec = dualsolve::schedule::ScheduleSpec::ot();
        let cfg = dualsolve::solver::SolverConfig::new(dualsolve::solver::Mode::P1c2, 4, spec);
        let gm = dualsolve::backbone::GaussianModel::isotropic(vec![0.5], 0.8).unwrap();
        let p = dualsolve::solver::SolverParams::default_init(4);
        for (xi, oi) in x.iter().zip(&out) {
            let r = dualsolve::solver::sample(&gm, &cfg, &p, &[*xi], None).unwrap();
            assert_eq!(r.final_state[0].to_bits(), oi.to_bits());
        }

        let mut ts = [0.0; 5];
        assert_eq!(ds_params_timesteps(params, ts.as_mut_ptr(), 5), DsStatus::Ok);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(
            ds_params_timesteps(params, ts.as_mut_ptr(), 4),
            DsStatus::InvalidArgument
        );

        ds_model_free(model);
        ds_params_free(params);
    }
}

#[test]
fn json_roundtrip_and_interp() {
    unsafe {
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            ds_params_default(3, c("vp-cosine").as_ptr(), ptr::null(), &mut a),
            DsStatus::Ok
        );
        assert_eq!(
            ds_params_default(5, c("vp-cosine").as_ptr(), ptr::null(), &mut b),
            DsStatus::Ok
        );
        let mut s = ptr::null_mut();
        assert_eq!(ds_params_to_json(a, &mut s), DsStatus::Ok);
        let json = CStr::from_ptr(s).to_owned();
        ds_string_free(s);
        let mut back = ptr::null_mut();
        assert_eq!(ds_params_from_json(json.as_ptr(), &mut back), DsStatus::Ok);
        let mut s2 = ptr::null_mut();
        assert_eq!(ds_params_to_json(back, &mut s2), DsStatus::Ok);
        assert_eq!(CStr::from_ptr(s2), json.as_c_str());
        ds_string_free(s2);

        let mut mid = ptr::null_mut();
        assert_eq!(ds_params_interp(b, a, 4, &mut mid), DsStatus::Ok);
        assert_eq!(ds_params_steps(mid), 4);
        assert_eq!(ds_params_interp(a, b, 6, &mut mid), DsStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().join("p.json").to_str().unwrap());
        assert_eq!(ds_params_save(a, path.as_ptr()), DsStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ds_params_load(path.as_ptr(), &mut loaded), DsStatus::Ok);
        assert_eq!(ds_params_steps(loaded), 3);

        for h in [a, b, back, mid, loaded] {
            ds_params_free(h);
        }
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        ds_clear_error();
        assert!(ds_last_error().is_null());
        let mut p = ptr::null_mut();
        assert_eq!(
            ds_params_default(3, ptr::null(), ptr::null(), &mut p),
            DsStatus::NullPointer
        );
        assert!(last_error().contains("schedule"));
        assert_eq!(
            ds_params_default(3, c("nope").as_ptr(), ptr::null(), &mut p),
            DsStatus::InvalidArgument
        );
        assert_eq!(
            ds_params_default(0, c("ot").as_ptr(), ptr::null(), &mut p),
            DsStatus::InvalidArgument
        );
        assert_eq!(ds_params_from_json(c("{").as_ptr(), &mut p), DsStatus::Parse);
        assert_eq!(ds_params_load(c("/nonexistent/x.json").as_ptr(), &mut p), DsStatus::Io);
        assert!(p.is_null());
        let mut m = ptr::null_mut();
        assert_eq!(ds_model_mixture_1d(4.0, -1.0, &mut m), DsStatus::InvalidArgument);
        assert_eq!(ds_params_steps(ptr::null()), 0);
        ds_params_free(ptr::null_mut());
        ds_model_free(ptr::null_mut());
        ds_string_free(ptr::null_mut());
        assert!(!CStr::from_ptr(ds_version()).to_bytes().is_empty());
    }
}

#[test]
fn conditional_sampling_through_the_abi() {
    unsafe {
        let (mut p, mut m) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            ds_params_default(8, c("ot").as_ptr(), c("p2c2").as_ptr(), &mut p),
            DsStatus::Ok
        );
        assert_eq!(ds_model_mixture_1d(4.0, 1.0, &mut m), DsStatus::Ok);
        assert_eq!(ds_model_classes(m), 2);
        let mut x = [0.0; 4];
        assert_eq!(ds_initial_noise(p, 1, 4, 3, x.as_mut_ptr()), DsStatus::Ok);
        let cond = [0i64, 1, 0, 1];
        let st = ds_sample(p, m, ptr::null(), 3.0, x.as_ptr(), cond.as_ptr(), 4, x.as_mut_ptr());
        assert_eq!(st, DsStatus::Ok);
        for (xi, k) in x.iter().zip(cond) {
            assert_eq!(*xi > 0.0, k == 1, "{xi} for class {k}");
        }
        let bad = ds_sample(p, m, c("p9").as_ptr(), 1.0, x.as_ptr(), ptr::null(), 4, x.as_mut_ptr());
        assert_eq!(bad, DsStatus::InvalidArgument);
        ds_model_free(m);
        ds_params_free(p);
    }
}
