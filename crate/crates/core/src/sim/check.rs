use serde_json::Value;

use crate::fmke;

use super::{Check, Observation, Simulation};

/// Value at `path` below `v`; missing fields and non-objects give `None`.
pub fn at_path<'a>(v: &'a Value, path: &[String]) -> Option<&'a Value> {
    path.iter()
        .try_fold(v, |cur, seg| cur.as_object()?.get(seg))
}

fn read<'a>(obs: &'a Observation, key: &str, path: &[String]) -> Option<&'a Value> {
    at_path(obs.reads.get(key)?, path)
}

impl Simulation {
    pub(super) fn evaluate(&self, check: &Check) -> Result<(), String> {
        match check {
            Check::Converged => match self.check_convergence() {
                Ok(true) => Ok(()),
                Ok(false) => Err(format!("replicas diverge at t={}", self.now)),
                Err(e) => Err(e.to_string()),
            },
            Check::Quiescent => {
                if self.quiescent() {
                    Ok(())
                } else {
                    Err(format!(
                        "{} messages in flight, {} parked",
                        self.net.in_flight(),
                        self.net.parked()
                    ))
                }
            }
            Check::NoViolations => match self.violations.first() {
                None => Ok(()),
                Some(v) => Err(format!("{} violations, first: {v}", self.violations.len())),
            },
            Check::ReadsNever { all } => {
                let hit = self.observations.iter().find(|obs| {
                    all.iter()
                        .all(|c| read(obs, &c.key.to_string(), &c.path) == Some(&c.equals))
                });
                match hit {
                    None => Ok(()),
                    Some(obs) => Err(format!(
                        "{} at {} observed the forbidden state at t={}",
                        obs.client, obs.replica, obs.time
                    )),
                }
            }
            Check::ReadsEqual { a, b } => {
                let (ka, kb) = (a.key.to_string(), b.key.to_string());
                for obs in &self.observations {
                    if !obs.reads.contains_key(&ka) || !obs.reads.contains_key(&kb) {
                        continue;
                    }
                    let (va, vb) = (read(obs, &ka, &a.path), read(obs, &kb, &b.path));
                    if va != vb {
                        return Err(format!(
                            "{} at {} read {} against {} at t={}",
                            obs.client,
                            obs.replica,
                            va.unwrap_or(&Value::Null),
                            vb.unwrap_or(&Value::Null),
                            obs.time
                        ));
                    }
                }
                Ok(())
            }
            Check::FmkeConsistent => {
                for obs in &self.observations {
                    if let Some(problem) = fmke::check_reads(&obs.reads).into_iter().next() {
                        return Err(format!(
                            "{} at {} t={}: {problem}",
                            obs.client, obs.replica, obs.time
                        ));
                    }
                }
                Ok(())
            }
            Check::Outcomes {
                action,
                result,
                blocked,
                min,
                max,
            } => {
                let count = self
                    .outcomes
                    .iter()
                    .filter(|o| action.as_ref().is_none_or(|a| *a == o.action))
                    .filter(|o| o.result.as_str() == result)
                    .filter(|o| blocked.is_none_or(|b| b == o.blocked))
                    .count();
                if min.is_some_and(|m| count < m) || max.is_some_and(|m| count > m) {
                    Err(format!(
                        "{count} outcomes `{result}`, expected {}..{}",
                        min.map_or(String::new(), |m| m.to_string()),
                        max.map_or(String::new(), |m| m.to_string())
                    ))
                } else {
                    Ok(())
                }
            }
            Check::Value {
                replica,
                key,
                path,
                equals,
            } => {
                let v = self.replicas[replica.index()]
                    .value(key)
                    .map_err(|e| e.to_string())?
                    .to_json();
                match at_path(&v, path) {
                    Some(got) if got == equals => Ok(()),
                    got => Err(format!(
                        "{key} at {replica} is {}, expected {equals}",
                        got.unwrap_or(&Value::Null)
                    )),
                }
            }
            Check::BoundedSafe => {
                for (key, bound) in &self.bounded {
                    for rep in &self.replicas {
                        let v = rep
                            .value(key)
                            .ok()
                            .and_then(|v| v.as_counter())
                            .ok_or_else(|| format!("{key} is not a counter"))?;
                        if v < *bound {
                            return Err(format!("{key} is {v} at {}, bound {bound}", rep.id()));
                        }
                    }
                }
                if self.violations.iter().any(|v| v.starts_with("bound:")) {
                    return Err("a bounded counter went below its bound".into());
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn path_lookup() {
        let v = json!({"a": {"b": 1}});
        assert_eq!(at_path(&v, &[]), Some(&v));
        assert_eq!(at_path(&v, &["a".into(), "b".into()]), Some(&json!(1)));
        assert_eq!(at_path(&v, &["a".into(), "c".into()]), None);
        assert_eq!(at_path(&json!(3), &["a".into()]), None);
    }
}
