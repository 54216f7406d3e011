use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ParameterState, Probe, TaskSpec, TrainRequest, TrainResult};
use crate::metrics::LearningCurve;
use crate::seed::derive_seed;

/// Effect of having trained on a source task when learning a target task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferEffect {
    /// Added to the target's zero-shot loss.
    pub zero_shot_offset: f64,
    /// Multiplies the target's convergence rate.
    pub rate_multiplier: f64,
}

impl TransferEffect {
    pub const NEUTRAL: TransferEffect = TransferEffect { zero_shot_offset: 0.0, rate_multiplier: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEffectMatrix {
    #[serde(with = "pair_map")]
    entries: BTreeMap<(String, String), TransferEffect>,
    /// Weight ratio between consecutive lineage entries, most recent first.
    pub lineage_decay: f64,
}

impl Default for TransferEffectMatrix {
    fn default() -> Self {
        Self { entries: BTreeMap::new(), lineage_decay: 0.5 }
    }
}

impl TransferEffectMatrix {
    pub fn new(lineage_decay: f64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&lineage_decay) {
            return Err(BackendError::InvalidRequest(format!("lineage decay {lineage_decay} outside [0, 1]")));
        }
        Ok(Self { entries: BTreeMap::new(), lineage_decay })
    }

    pub fn set(&mut self, source: &str, target: &str, effect: TransferEffect) -> Result<(), BackendError> {
        if !(effect.rate_multiplier > 0.0) || !effect.zero_shot_offset.is_finite() {
            return Err(BackendError::InvalidRequest(format!("invalid transfer effect {source}->{target}: {effect:?}")));
        }
        self.entries.insert((source.to_string(), target.to_string()), effect);
        Ok(())
    }

    pub fn get(&self, source: &str, target: &str) -> TransferEffect {
        self.entries
            .get(&(source.to_string(), target.to_string()))
            .copied()
            .unwrap_or(TransferEffect::NEUTRAL)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(String, String), &TransferEffect)> {
        self.entries.iter()
    }

    /// Decay-weighted composition over a lineage: offsets add, rates multiply.
    pub fn composed(&self, lineage: &[String], target: &str) -> TransferEffect {
        let mut offset = 0.0;
        let mut log_rate = 0.0;
        let mut weight = 1.0;
        for source in lineage.iter().rev() {
            let e = self.get(source, target);
            offset += weight * e.zero_shot_offset;
            log_rate += weight * e.rate_multiplier.ln();
            weight *= self.lineage_decay;
        }
        TransferEffect { zero_shot_offset: offset, rate_multiplier: log_rate.exp() }
    }
}

mod pair_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::TransferEffect;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        source: String,
        target: String,
        #[serde(flatten)]
        effect: TransferEffect,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<(String, String), TransferEffect>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map
            .iter()
            .map(|((source, target), effect)| Entry { source: source.clone(), target: target.clone(), effect: *effect })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), TransferEffect>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| ((e.source, e.target), e.effect)).collect())
    }
}

/// Closed-form learner: `loss(s) = L_inf + (l0' - L_inf) * exp(-s * rho / tau)`
/// where `l0'` and `rho` fold in the initialization's lineage effects.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    pub effects: TransferEffectMatrix,
    pub noise_sigma: f64,
    root: ParameterState,
}

impl SyntheticBackend {
    pub fn new(effects: TransferEffectMatrix, root: ParameterState) -> Self {
        Self { effects, noise_sigma: 0.0, root }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }
}

/// NLL-like companion of the task metric, used only by the probes.
fn nll_of(metric: f64) -> f64 {
    (1.0 + 4.0 * metric).ln()
}

impl Backend for SyntheticBackend {
    fn root_state(&self) -> &ParameterState {
        &self.root
    }

    fn train(&self, task: &TaskSpec, request: &TrainRequest, seed: u64) -> Result<TrainResult, BackendError> {
        request.validate()?;
        let params = task
            .synthetic
            .as_ref()
            .ok_or_else(|| BackendError::MissingSyntheticParams(task.task_id.clone()))?;
        let invalid = |reason: &str| BackendError::InvalidSyntheticParams {
            task: task.task_id.clone(),
            reason: reason.to_string(),
        };
        if !(params.time_constant > 0.0) {
            return Err(invalid("time constant must be positive"));
        }
        if params.asymptote > params.zero_shot_loss {
            return Err(invalid("asymptote above zero-shot loss"));
        }
        if params.asymptote < task.metric.lower_bound {
            return Err(invalid("asymptote below metric lower bound"));
        }

        let effect = self.effects.composed(&request.init.lineage, &task.task_id);
        let start = (params.zero_shot_loss + effect.zero_shot_offset).max(params.asymptote);
        let rate = effect.rate_multiplier / params.time_constant;
        let gap = start - params.asymptote;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &task.task_id));
        let noise = if self.noise_sigma > 0.0 {
            Some(Normal::new(0.0, self.noise_sigma).map_err(|e| invalid(&e.to_string()))?)
        } else {
            None
        };
        let points = request
            .eval_steps
            .iter()
            .map(|&s| {
                let mut v = params.asymptote + gap * (-(s as f64) * rate).exp();
                if let Some(n) = &noise {
                    v = (v + n.sample(&mut rng)).max(task.metric.lower_bound);
                }
                (s, v)
            })
            .collect();
        let curve = LearningCurve::new(points, task.metric.metric_id.clone(), task.metric.lower_bound)?;

        let kept = curve.best_step(request.budget).unwrap_or(0);
        let fraction = 1.0 - (-(kept as f64) * rate).exp();
        let final_state = request.init.state.toward(&params.optimum, fraction)?;

        let metric0 = curve.value_at(0).unwrap_or(start);
        let metric5 = curve.value_at(5).unwrap_or(metric0);
        let probe = Probe { loss0: nll_of(metric0), loss5: nll_of(metric5), metric0, metric5 };
        let result = TrainResult { curve, final_state, probe };
        result.validate(request)?;
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backends::{default_eval_steps, Init, ParamGroup};
    use crate::metrics::{perf_auc, relative_perf_auc, MetricSpec, PerfSummary};

    fn task(id: &str) -> TaskSpec {
        let optimum =
            ParameterState::new(ParamGroup::ALL.iter().map(|&g| (g, vec![1.0, -1.0, 0.5])).collect()).unwrap();
        TaskSpec {
            task_id: id.into(),
            family_id: "fam".into(),
            metric: MetricSpec::loss("loss"),
            synthetic: Some(SyntheticParams { zero_shot_loss: 1.0, asymptote: 0.2, time_constant: 200.0, optimum }),
        }
    }

    use super::super::SyntheticParams;

    fn init(lineage: &[&str]) -> Init {
        Init { lineage: lineage.iter().map(|s| s.to_string()).collect(), state: Arc::new(ParameterState::zeros(3)) }
    }

    fn run(backend: &SyntheticBackend, lineage: &[&str], budget: u64) -> TrainResult {
        let req = TrainRequest::new("C", init(lineage), budget, default_eval_steps(budget)).unwrap();
        backend.train(&task("C"), &req, 11).unwrap()
    }

    fn rel(backend: &SyntheticBackend, lineage: &[&str]) -> f64 {
        let budget = 10_000;
        let m = PerfSummary::of(&run(backend, lineage, budget).curve, budget, "m").unwrap();
        let i = PerfSummary::of(&run(backend, &[], budget).curve, budget, "i").unwrap();
        relative_perf_auc(&m, &i, &MetricSpec::loss("loss")).unwrap()
    }

    /// Closed-form curve, integrated independently of the backend.
    fn closed_form_auc(start: f64, rate: f64, budget: u64) -> f64 {
        let pts: Vec<(u64, f64)> =
            default_eval_steps(budget).into_iter().map(|s| (s, 0.2 + (start - 0.2) * (-(s as f64) * rate).exp())).collect();
        perf_auc(&LearningCurve::new(pts, "loss", 0.0).unwrap(), budget).unwrap()
    }

    #[test]
    fn neutral_curve_approaches_asymptote() {
        let backend = SyntheticBackend::new(TransferEffectMatrix::default(), ParameterState::zeros(3));
        let r = run(&backend, &[], 1_000_000);
        let last = r.curve.points().last().unwrap().1;
        assert!((last - 0.2).abs() < 1e-9);
        assert_eq!(r.curve.value_at(0), Some(1.0));
    }

    #[test]
    fn positive_and_negative_effects() {
        let mut effects = TransferEffectMatrix::default();
        effects.set("A", "C", TransferEffect { zero_shot_offset: -0.2, rate_multiplier: 2.0 }).unwrap();
        effects.set("N", "C", TransferEffect { zero_shot_offset: 0.3, rate_multiplier: 0.5 }).unwrap();
        let backend = SyntheticBackend::new(effects, ParameterState::zeros(3));

        let ind = closed_form_auc(1.0, 1.0 / 200.0, 10_000);
        let pos = closed_form_auc(0.8, 2.0 / 200.0, 10_000);
        let neg = closed_form_auc(1.3, 0.5 / 200.0, 10_000);
        let expected_pos = (ind - pos) / ind;
        let expected_neg = (ind - neg) / ind;
        assert!(expected_pos > 0.0 && expected_neg < 0.0);
        assert!((rel(&backend, &["A"]) - expected_pos).abs() < 1e-12);
        assert!((rel(&backend, &["N"]) - expected_neg).abs() < 1e-12);
    }

    #[test]
    fn lineage_composition_decays() {
        let mut effects = TransferEffectMatrix::default();
        effects.set("A", "C", TransferEffect { zero_shot_offset: -0.2, rate_multiplier: 4.0 }).unwrap();
        let e = effects.composed(&["A".into(), "B".into()], "C");
        assert!((e.zero_shot_offset + 0.1).abs() < 1e-15);
        assert!((e.rate_multiplier - 2.0).abs() < 1e-12);
        assert_eq!(effects.composed(&[], "C"), TransferEffect::NEUTRAL);
    }

    #[test]
    fn offset_clamped_at_asymptote() {
        let mut effects = TransferEffectMatrix::default();
        effects.set("A", "C", TransferEffect { zero_shot_offset: -5.0, rate_multiplier: 1.0 }).unwrap();
        let backend = SyntheticBackend::new(effects, ParameterState::zeros(3));
        let r = run(&backend, &["A"], 100);
        assert!(r.curve.points().iter().all(|p| (p.1 - 0.2).abs() < 1e-15));
    }

    #[test]
    fn missing_params_and_bad_request() {
        let backend = SyntheticBackend::new(TransferEffectMatrix::default(), ParameterState::zeros(3));
        let mut t = task("C");
        t.synthetic = None;
        let req = TrainRequest::new("C", init(&[]), 10, vec![0, 5, 10]).unwrap();
        assert!(matches!(backend.train(&t, &req, 0), Err(BackendError::MissingSyntheticParams(_))));
        let bad = TrainRequest { eval_steps: vec![0, 5, 20], ..req };
        assert!(matches!(backend.train(&task("C"), &bad, 0), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn noise_is_seeded() {
        let backend = SyntheticBackend::new(TransferEffectMatrix::default(), ParameterState::zeros(3)).with_noise(0.05);
        let req = TrainRequest::new("C", init(&[]), 1000, default_eval_steps(1000)).unwrap();
        let a = backend.train(&task("C"), &req, 3).unwrap();
        let b = backend.train(&task("C"), &req, 3).unwrap();
        let c = backend.train(&task("C"), &req, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn curve_non_increasing_and_state_converges() {
        let backend = SyntheticBackend::new(TransferEffectMatrix::default(), ParameterState::zeros(3));
        let optimum = task("C").synthetic.unwrap().optimum;
        let mut last_dist = f64::INFINITY;
        for budget in [5, 50, 500, 5000] {
            let r = run(&backend, &[], budget);
            assert!(r.curve.points().windows(2).all(|w| w[1].1 <= w[0].1));
            let d = r.final_state.distance(&optimum);
            assert!(d < last_dist);
            last_dist = d;
        }
    }

    #[test]
    fn neutral_lineage_identity_does_not_matter() {
        let backend = SyntheticBackend::new(TransferEffectMatrix::default(), ParameterState::zeros(3));
        assert_eq!(run(&backend, &["X", "Y"], 1000).curve, run(&backend, &[], 1000).curve);
    }
}
