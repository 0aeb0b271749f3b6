//! Python bindings: channel generation, beamforming, the 16-QAM demapper,
//! schedule/loss helpers, and trained-predictor inference.

use numpy::{
    Complex32, Complex64, IntoPyArray, PyArray1, PyArray2, PyArrayMethods, PyReadonlyArray1,
    PyReadonlyArray2, PyReadonlyArray4, PyUntypedArrayMethods,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use beamlink::autodiff::{Tape, Tensor};
use beamlink::beamforming::{zf_exact, zf_neumann_matrix};
use beamlink::channel::{generate_realization, GridSpec, TdlModel, TdlProfile};
use beamlink::model::{load_checkpoint, output_to_channel, preprocess, PredictorNet};
use beamlink::phy::{compute_llr, Constellation};
use beamlink::training::{snr_weight as snr_weight_impl, LrSchedule};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_model(name: &str) -> PyResult<TdlModel> {
    match name.to_ascii_lowercase().as_str() {
        "tdl-a" | "a" => Ok(TdlModel::A),
        "tdl-b" | "b" => Ok(TdlModel::B),
        "tdl-c" | "c" => Ok(TdlModel::C),
        other => Err(PyValueError::new_err(format!(
            "unknown TDL model {other:?} (tdl-a|tdl-b|tdl-c)"
        ))),
    }
}

/// Complex [n, m] numpy array -> trailing-pair tensor [1, n, m, 2].
fn complex_matrix_to_tensor(h: &PyReadonlyArray2<'_, Complex64>) -> PyResult<Tensor<f64>> {
    let view = h.as_array();
    let (n, m) = (view.nrows(), view.ncols());
    let mut data = Vec::with_capacity(n * m * 2);
    for v in view.iter() {
        data.push(v.re);
        data.push(v.im);
    }
    Ok(Tensor::from_vec(&[1, n, m, 2], data))
}

fn tensor_to_complex_vec(t: &Tensor<f64>) -> Vec<Complex64> {
    t.data()
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0], c[1]))
        .collect()
}

/// Max Doppler shift v * f_c / c in Hz.
#[pyfunction]
fn max_doppler_hz(velocity_kmh: f64, carrier_hz: f64) -> f64 {
    beamlink::channel::max_doppler_hz(velocity_kmh, carrier_hz)
}

/// Generate one tapped-delay-line channel realization.
///
/// Returns a complex64 array of shape [n_slots, s, f, n_rx, n_tx].
#[pyfunction]
#[pyo3(signature = (model, delay_spread_ns, velocity_kmh, n_slots, seed, prbs = 4))]
fn generate_channel<'py>(
    py: Python<'py>,
    model: &str,
    delay_spread_ns: f64,
    velocity_kmh: f64,
    n_slots: usize,
    seed: u64,
    prbs: usize,
) -> PyResult<Bound<'py, numpy::PyArrayDyn<Complex32>>> {
    let grid = GridSpec::desk(prbs);
    let profile = TdlProfile::new(parse_model(model)?);
    let r = generate_realization(&profile, delay_spread_ns, velocity_kmh, &grid, n_slots, seed)
        .map_err(err)?;
    let arr = PyArray1::from_vec(py, r.data.clone());
    arr.reshape(vec![r.n_slots, r.s, r.f, r.n_rx, r.n_tx])
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Exact zero-forcing precoder W = H^H (H H^H)^-1 for one channel matrix.
#[pyfunction]
fn zf_precoder<'py>(
    py: Python<'py>,
    h: PyReadonlyArray2<'py, Complex64>,
) -> PyResult<Bound<'py, PyArray2<Complex64>>> {
    let (nt, nr) = (h.shape()[0], h.shape()[1]);
    let t = complex_matrix_to_tensor(&h)?;
    let mut tape = Tape::new();
    let hv = tape.constant(t);
    let w = zf_exact(&mut tape, hv).map_err(err)?;
    let vals = tensor_to_complex_vec(tape.value(w));
    let arr = PyArray1::from_vec(py, vals);
    arr.reshape([nr, nt])
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// k-term Neumann-series approximation of the ZF precoder.
#[pyfunction]
fn zf_precoder_neumann<'py>(
    py: Python<'py>,
    h: PyReadonlyArray2<'py, Complex64>,
    k: usize,
) -> PyResult<Bound<'py, PyArray2<Complex64>>> {
    let (nt, nr) = (h.shape()[0], h.shape()[1]);
    let t = complex_matrix_to_tensor(&h)?;
    let mut tape = Tape::new();
    let hv = tape.constant(t);
    let w = zf_neumann_matrix(&mut tape, hv, k).map_err(err)?;
    let vals = tensor_to_complex_vec(tape.value(w));
    let arr = PyArray1::from_vec(py, vals);
    arr.reshape([nr, nt])
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Gray-map bits (multiple of 4) to unit-energy 16-QAM symbols.
#[pyfunction]
fn qam16_map<'py>(
    py: Python<'py>,
    bits: PyReadonlyArray1<'py, u8>,
) -> PyResult<Bound<'py, PyArray1<Complex64>>> {
    let c = Constellation::qam16();
    let bits = bits.as_slice()?;
    let symbols = c.map_bits(bits).map_err(err)?;
    Ok(PyArray1::from_vec(
        py,
        symbols
            .into_iter()
            .map(|z| Complex64::new(z.re, z.im))
            .collect(),
    ))
}

/// Exact per-bit LLRs for equalized symbols; positive favors bit 0.
#[pyfunction]
fn qam16_llr<'py>(
    py: Python<'py>,
    symbols: PyReadonlyArray1<'py, Complex64>,
    noise_var: PyReadonlyArray1<'py, f64>,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let sym = symbols.as_slice()?;
    let nv = noise_var.as_slice()?;
    if sym.len() != nv.len() {
        return Err(PyValueError::new_err(format!(
            "{} symbols vs {} noise variances",
            sym.len(),
            nv.len()
        )));
    }
    let n = sym.len();
    let mut data = Vec::with_capacity(n * 2);
    for z in sym {
        data.push(z.re);
        data.push(z.im);
    }
    let c = Constellation::qam16();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_vec(&[n, 2], data));
    let s2 = tape.constant(Tensor::from_vec(&[n], nv.to_vec()));
    let llr = compute_llr(&mut tape, x, s2, &c).map_err(err)?;
    let out = tape.value(llr).data().to_vec();
    let arr = out.into_pyarray(py);
    arr.reshape([n, 4])
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Sample weight log2(1 + linear SNR).
#[pyfunction]
fn snr_weight(snr_db: f64) -> f64 {
    snr_weight_impl(snr_db)
}

/// Warmup / plateau / linear-decay learning rate at an iteration.
#[pyfunction]
fn lr_at(
    iteration: usize,
    total_iterations: usize,
    base_lr: f64,
    warmup: usize,
    decay_start_frac: f64,
) -> f64 {
    LrSchedule {
        base_lr,
        warmup_iterations: warmup,
        decay_start_frac,
        total_iterations,
    }
    .at(iteration)
}

/// A trained channel predictor loaded from a checkpoint.
#[pyclass]
struct Predictor {
    net: PredictorNet<f32>,
}

#[pymethods]
impl Predictor {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Predictor {
            net: load_checkpoint::<f32>(path).map_err(err)?,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    #[getter]
    fn tau_max(&self) -> usize {
        self.net.config.tau_max
    }

    #[getter]
    fn history(&self) -> usize {
        self.net.config.history
    }

    fn describe(&self) -> String {
        let c = &self.net.config;
        format!(
            "{} blocks, conv width {}, {} parameters, history {}, tau_max {}",
            c.blocks.len(),
            c.conv_in_channels,
            self.net.param_count(),
            c.history,
            c.tau_max
        )
    }

    /// Predict the DL channel (stored uplink orientation) from an UL channel
    /// estimate [s, f, n_rx, n_tx] complex64, for prediction length tau.
    fn predict<'py>(
        &mut self,
        py: Python<'py>,
        estimate: PyReadonlyArray4<'py, Complex32>,
        tau: usize,
    ) -> PyResult<Bound<'py, numpy::PyArrayDyn<Complex32>>> {
        let cfg = self.net.config.clone();
        if cfg.history != 1 {
            return Err(PyValueError::new_err(
                "this checkpoint expects stacked history slots",
            ));
        }
        let shape = estimate.shape().to_vec();
        if shape[2] != cfg.n_rx || shape[3] != cfg.n_tx {
            return Err(PyValueError::new_err(format!(
                "estimate is {shape:?}, model expects [s, f, {}, {}]",
                cfg.n_rx, cfg.n_tx
            )));
        }
        let view = estimate.as_array();
        let mut data = Vec::with_capacity(view.len() * 2);
        for v in view.iter() {
            data.push(v.re);
            data.push(v.im);
        }
        let t = Tensor::from_vec(&[shape[0], shape[1], shape[2], shape[3], 2], data);
        let mut tape = Tape::<f32>::new();
        let e = tape.constant(t);
        let input = preprocess(&mut tape, &[e], tau, &cfg).map_err(err)?;
        let (out, _) = self.net.forward(&mut tape, input, false).map_err(err)?;
        let h = output_to_channel(&mut tape, out, &cfg).map_err(err)?;
        let vals: Vec<Complex32> = tape
            .value(h)
            .data()
            .chunks_exact(2)
            .map(|c| Complex32::new(c[0], c[1]))
            .collect();
        let arr = PyArray1::from_vec(py, vals);
        arr.reshape(vec![shape[0], shape[1], cfg.n_rx, cfg.n_tx])
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

#[pymodule]
fn beamlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(max_doppler_hz, m)?)?;
    m.add_function(wrap_pyfunction!(generate_channel, m)?)?;
    m.add_function(wrap_pyfunction!(zf_precoder, m)?)?;
    m.add_function(wrap_pyfunction!(zf_precoder_neumann, m)?)?;
    m.add_function(wrap_pyfunction!(qam16_map, m)?)?;
    m.add_function(wrap_pyfunction!(qam16_llr, m)?)?;
    m.add_function(wrap_pyfunction!(snr_weight, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_class::<Predictor>()?;
    Ok(())
}
