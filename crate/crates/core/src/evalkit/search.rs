use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::EvalError;

/// How one hyperparameter is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSpec {
    /// `steps` evenly spaced values from `lo` to `hi` (geometric when `log`),
    /// rounded when `integer`.
    Range {
        lo: f64,
        hi: f64,
        steps: usize,
        #[serde(default)]
        integer: bool,
        #[serde(default)]
        log: bool,
    },
    Choice(Vec<Value>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    #[serde(flatten)]
    pub spec: ParamSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamDef>,
}

fn number(v: f64, integer: bool) -> Value {
    if integer {
        Value::from(v.round() as i64)
    } else {
        Value::from(v)
    }
}

impl ParamSpec {
    fn validate(&self, name: &str) -> Result<(), EvalError> {
        match self {
            ParamSpec::Range {
                lo, hi, steps, log, ..
            } => {
                if *steps < 2 {
                    return Err(EvalError::Input(format!(
                        "`{name}`: a range needs at least 2 steps"
                    )));
                }
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(EvalError::Input(format!(
                        "`{name}`: bad range [{lo}, {hi}]"
                    )));
                }
                if *log && *lo <= 0.0 {
                    return Err(EvalError::Input(format!(
                        "`{name}`: log range must be positive"
                    )));
                }
                Ok(())
            }
            ParamSpec::Choice(v) if v.is_empty() => {
                Err(EvalError::Input(format!("`{name}`: empty choice")))
            }
            ParamSpec::Choice(_) => Ok(()),
        }
    }

    /// Discrete grid values.
    pub fn grid(&self) -> Vec<Value> {
        match self {
            ParamSpec::Range {
                lo,
                hi,
                steps,
                integer,
                log,
            } => {
                let mut out: Vec<Value> = (0..*steps)
                    .map(|i| {
                        let t = i as f64 / (*steps - 1) as f64;
                        let v = if *log {
                            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                        } else {
                            lo + t * (hi - lo)
                        };
                        number(v, *integer)
                    })
                    .collect();
                if *integer {
                    out.dedup();
                }
                out
            }
            ParamSpec::Choice(v) => v.clone(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Value {
        match self {
            ParamSpec::Range {
                lo,
                hi,
                integer,
                log,
                ..
            } => {
                let t: f64 = rng.gen();
                let v = if *log {
                    (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + t * (hi - lo)
                };
                number(v, *integer)
            }
            ParamSpec::Choice(v) => v[rng.gen_range(0..v.len())].clone(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.params.is_empty() {
            return Err(EvalError::Input("search space has no parameters".into()));
        }
        for p in &self.params {
            p.spec.validate(&p.name)?;
        }
        Ok(())
    }

    /// Cartesian product of every parameter's grid; the last parameter
    /// varies fastest.
    pub fn grid_points(&self) -> Vec<Value> {
        let mut points = vec![Map::new()];
        for p in &self.params {
            let values = p.spec.grid();
            let mut next = Vec::with_capacity(points.len() * values.len());
            for base in &points {
                for v in &values {
                    let mut m = base.clone();
                    m.insert(p.name.clone(), v.clone());
                    next.push(m);
                }
            }
            points = next;
        }
        points.into_iter().map(Value::Object).collect()
    }

    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<Value> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let m: Map<String, Value> = self
                    .params
                    .iter()
                    .map(|p| (p.name.clone(), p.spec.sample(&mut rng)))
                    .collect();
                Value::Object(m)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    /// Position of the point in evaluation order.
    pub order: usize,
    pub config: Value,
    /// Mean over folds.
    pub score: f64,
    pub fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub order: usize,
    pub config: Value,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Option<Trial>,
    /// Best first; equal scores keep evaluation order.
    pub leaderboard: Vec<Trial>,
    pub failures: Vec<FailedTrial>,
}

fn evaluate<F>(points: Vec<Value>, k_folds: usize, eval_fn: F) -> Result<SearchOutcome, EvalError>
where
    F: Fn(&Value, usize) -> Result<f64, String> + Sync,
{
    if k_folds == 0 {
        return Err(EvalError::Input("k_folds must be at least 1".into()));
    }
    let results: Vec<(usize, Value, Result<Vec<f64>, String>)> = points
        .into_par_iter()
        .enumerate()
        .map(|(order, config)| {
            let scores = (0..k_folds)
                .map(|fold| match eval_fn(&config, fold) {
                    Ok(s) if s.is_finite() => Ok(s),
                    Ok(s) => Err(format!("fold {fold}: non-finite score {s}")),
                    Err(e) => Err(format!("fold {fold}: {e}")),
                })
                .collect::<Result<Vec<f64>, String>>();
            (order, config, scores)
        })
        .collect();
    let mut out = SearchOutcome::default();
    for (order, config, r) in results {
        match r {
            Ok(fold_scores) => {
                let score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
                out.leaderboard.push(Trial {
                    order,
                    config,
                    score,
                    fold_scores,
                });
            }
            Err(error) => out.failures.push(FailedTrial {
                order,
                config,
                error,
            }),
        }
    }
    out.leaderboard
        .sort_by(|a, b| b.score.total_cmp(&a.score).then(a.order.cmp(&b.order)));
    out.best = out.leaderboard.first().cloned();
    Ok(out)
}

/// Scores every grid point with `eval_fn(config, fold)` for each of `k_folds`
/// folds and ranks points by mean score. Points whose evaluation fails are
/// listed in `failures` and the search goes on.
pub fn grid_search<F>(
    space: &SearchSpace,
    k_folds: usize,
    eval_fn: F,
) -> Result<SearchOutcome, EvalError>
where
    F: Fn(&Value, usize) -> Result<f64, String> + Sync,
{
    space.validate()?;
    evaluate(space.grid_points(), k_folds, eval_fn)
}

/// Like [`grid_search`] over `n` points drawn uniformly with `seed`.
pub fn random_search<F>(
    space: &SearchSpace,
    n: usize,
    seed: u64,
    k_folds: usize,
    eval_fn: F,
) -> Result<SearchOutcome, EvalError>
where
    F: Fn(&Value, usize) -> Result<f64, String> + Sync,
{
    space.validate()?;
    evaluate(space.sample_points(n, seed), k_folds, eval_fn)
}
