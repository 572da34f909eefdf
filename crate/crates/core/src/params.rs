//! Named, seeded parameter storage.
//!
//! Layers request their weights from a [`Params`] scope; every weight is a
//! [`Var`] registered under a dotted path (`encoder1.dtd0.convs.3.weight`).
//! Initial values come from a ChaCha stream seeded at construction, so the
//! same seed and construction order always give the same network.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Uniform(f64),
}

struct Store {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

#[derive(Clone)]
pub struct Params {
    store: Arc<Mutex<Store>>,
    prefix: String,
}

impl Params {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            store: Arc::new(Mutex::new(Store {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                dtype,
                device: device.clone(),
            })),
            prefix: String::new(),
        }
    }

    /// Child scope `prefix.name`.
    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self { store: self.store.clone(), prefix }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn dtype(&self) -> DType {
        self.store.lock().unwrap().dtype
    }

    pub fn device(&self) -> Device {
        self.store.lock().unwrap().device.clone()
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Creates (or returns the existing) variable `name` in this scope.
    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        let shape = shape.into();
        let full = self.full_name(name);
        let mut store = self.store.lock().unwrap();
        if let Some(v) = store.vars.get(&full) {
            if v.shape() != &shape {
                candle_core::bail!("parameter {full} exists with shape {:?}, requested {shape:?}", v.shape());
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.elem_count();
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| store.rng.random_range(-bound..=bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| store.rng.random_range(-bound..=bound)).collect(),
        };
        let (dtype, device) = (store.dtype, store.device.clone());
        let t = Tensor::from_vec(values, shape, &device)?.to_dtype(dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        store.vars.insert(full, var);
        Ok(out)
    }

    /// All variables under this scope, keyed by full name.
    pub fn named_vars(&self) -> BTreeMap<String, Var> {
        let store = self.store.lock().unwrap();
        store
            .vars
            .iter()
            .filter(|(k, _)| self.prefix.is_empty() || k.starts_with(&format!("{}.", self.prefix)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.named_vars().into_values().collect()
    }

    pub fn var(&self, full_name: &str) -> Option<Var> {
        self.store.lock().unwrap().vars.get(full_name).cloned()
    }

    /// Number of scalar parameters under this scope.
    pub fn count(&self) -> usize {
        self.named_vars().values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every variable under this scope whose name satisfies `pick`
    /// with zeros. Returns how many were touched.
    pub fn zero_where(&self, pick: impl Fn(&str) -> bool) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.named_vars() {
            if pick(&name) {
                var.set(&var.zeros_like()?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn zero_all(&self) -> Result<usize> {
        self.zero_where(|_| true)
    }

    /// Copies values from `tensors` into same-named variables. Every
    /// variable under this scope must be present with a matching shape.
    pub fn load(&self, tensors: &std::collections::HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in self.named_vars() {
            let Some(t) = tensors.get(&name) else {
                candle_core::bail!("missing parameter {name}");
            };
            if t.shape() != var.shape() {
                candle_core::bail!("parameter {name}: expected {:?}, found {:?}", var.shape(), t.shape());
            }
            var.set(&t.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Params({} tensors)", self.named_vars().len())
    }
}
