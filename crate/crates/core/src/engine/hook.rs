use crate::model::NeuronId;

/// Population view handed to an [`AttackHook`] after leak integration and
/// before the threshold test.
pub struct Membranes<'a> {
    pub(crate) v: &'a mut [f64],
    pub(crate) v_threshold: &'a [f64],
    pub(crate) v_reset: &'a [f64],
    pub(crate) refractory_until: &'a [u32],
    pub(crate) step: u32,
}

impl Membranes<'_> {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn voltage(&self, id: NeuronId) -> f64 {
        self.v[id as usize]
    }

    pub fn v_threshold(&self, id: NeuronId) -> f64 {
        self.v_threshold[id as usize]
    }

    pub fn v_reset(&self, id: NeuronId) -> f64 {
        self.v_reset[id as usize]
    }

    pub fn is_refractory(&self, id: NeuronId) -> bool {
        self.step < self.refractory_until[id as usize]
    }

    /// Overwrites the membrane voltage. Refractory neurons are clamped at
    /// reset and ignore the write; returns whether it took effect.
    pub fn force(&mut self, id: NeuronId, value: f64) -> bool {
        if self.is_refractory(id) {
            return false;
        }
        self.v[id as usize] = value;
        true
    }
}

/// Per-step intervention point inside the simulation loop.
pub trait AttackHook: Send + Sync {
    /// Whether `apply` may change anything at `step`. The engine skips the
    /// call (and uses a fused update loop) when this is false.
    fn is_active(&self, step: u32, t: f64) -> bool;

    fn apply(&self, step: u32, t: f64, membranes: &mut Membranes<'_>);
}

/// Hook that never intervenes.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullHook;

impl AttackHook for NullHook {
    fn is_active(&self, _step: u32, _t: f64) -> bool {
        false
    }

    fn apply(&self, _step: u32, _t: f64, _membranes: &mut Membranes<'_>) {}
}

/// Adapts a closure into an always-active hook.
pub struct FnHook<F>(pub F);

impl<F> AttackHook for FnHook<F>
where
    F: Fn(u32, f64, &mut Membranes<'_>) + Send + Sync,
{
    fn is_active(&self, _step: u32, _t: f64) -> bool {
        true
    }

    fn apply(&self, step: u32, t: f64, membranes: &mut Membranes<'_>) {
        (self.0)(step, t, membranes)
    }
}
