//! Hypothesised CDFs for `gof`, written `family:param[:param]`.

use isomix::simulation::ComponentCdf;
use statrs::distribution::{ContinuousCDF, Exp, LogNormal, Weibull};

pub type Cdf = Box<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn parse_cdf(spec: &str) -> Result<Cdf, String> {
    let mut parts = spec.trim().split(':');
    let family = parts.next().unwrap_or("");
    let params = parts
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad parameter `{p}` in `{spec}`")))
        .collect::<Result<Vec<f64>, String>>()?;
    let arity = |n: usize| {
        if params.len() == n {
            Ok(())
        } else {
            Err(format!("`{family}` takes {n} parameter(s), got {} in `{spec}`", params.len()))
        }
    };
    let bad = |e: &dyn std::fmt::Display| format!("`{spec}`: {e}");
    match family {
        "exponential" => {
            arity(1)?;
            let d = Exp::new(params[0]).map_err(|e| bad(&e))?;
            Ok(Box::new(move |t| d.cdf(t)))
        }
        "weibull" => {
            arity(2)?;
            let d = Weibull::new(params[0], params[1]).map_err(|e| bad(&e))?;
            Ok(Box::new(move |t| d.cdf(t)))
        }
        "lognormal" => {
            arity(2)?;
            let d = LogNormal::new(params[0], params[1]).map_err(|e| bad(&e))?;
            Ok(Box::new(move |t| d.cdf(t)))
        }
        "logistic" => {
            arity(2)?;
            let (loc, scale) = (params[0], params[1]);
            if !(scale > 0.0 && loc.is_finite()) {
                return Err(bad(&"scale must be positive"));
            }
            Ok(Box::new(move |t| 1.0 / (1.0 + (-(t - loc) / scale).exp())))
        }
        "truncexp" => {
            arity(2)?;
            let (scale, upper) = (params[0], params[1]);
            if !(scale > 0.0 && upper > 0.0 && upper.is_finite()) {
                return Err(bad(&"scale and upper bound must be positive"));
            }
            let d = ComponentCdf::TruncatedExponential { scale, upper };
            Ok(Box::new(move |t| d.eval(t)))
        }
        other => Err(format!(
            "unknown family `{other}`; expected exponential, weibull, lognormal, logistic or truncexp"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_evaluate() {
        let e = parse_cdf("exponential:2").unwrap();
        assert!((e(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
        let w = parse_cdf("weibull:1:0.5").unwrap();
        assert!((w(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-14);
        let l = parse_cdf("logistic:3:1").unwrap();
        assert_eq!(l(3.0), 0.5);
        let ln = parse_cdf("lognormal:0:1").unwrap();
        assert!((ln(1.0) - 0.5).abs() < 1e-12);
        let te = parse_cdf("truncexp:1:10").unwrap();
        assert_eq!(te(10.0), 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        for s in ["gamma:1:2", "exponential", "exponential:1:2", "weibull:x:1", "exponential:-1", "logistic:0:0"] {
            assert!(parse_cdf(s).is_err(), "{s}");
        }
    }
}
