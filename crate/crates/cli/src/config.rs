//! Run configuration: TOML text in, a validated run plan out.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use toml::Spanned;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invocation {
    CheckCompat,
    Simulate,
    SampleGibbs,
    Reversibility,
    PlanetSimulate,
    PlanetClusteringCurve,
    PlanetCheckModel,
}

impl Invocation {
    pub fn name(self) -> &'static str {
        match self {
            Invocation::CheckCompat => "check-compat",
            Invocation::Simulate => "simulate",
            Invocation::SampleGibbs => "sample-gibbs",
            Invocation::Reversibility => "reversibility",
            Invocation::PlanetSimulate => "planet-simulate",
            Invocation::PlanetClusteringCurve => "planet-clustering-curve",
            Invocation::PlanetCheckModel => "planet-check-model",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ParseError {}

// ---------------------------------------------------------------- file schema

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    command: Option<Spanned<Invocation>>,
    seed: Option<u64>,
    format: Option<Format>,
    out: Option<PathBuf>,
    model: Option<Spanned<ModelSection>>,
    check_compat: Option<Spanned<CompatSection>>,
    simulate: Option<Spanned<SimulateSection>>,
    sample_gibbs: Option<Spanned<GibbsSection>>,
    reversibility: Option<Spanned<ReversibilitySection>>,
    planet: Option<Spanned<PlanetSection>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintDef {
    Affine {
        id: String,
        normal: Vec<f64>,
        offset: f64,
    },
    BallInside {
        id: String,
        center: Vec<f64>,
        radius: f64,
        axes: Option<Vec<usize>>,
    },
    BallOutside {
        id: String,
        center: Vec<f64>,
        radius: f64,
        axes: Option<Vec<usize>>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialDef {
    #[default]
    Zero,
    Linear {
        coeffs: Vec<f64>,
    },
    Quadratic {
        stiffness: f64,
        center: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationDef {
    pub center: Vec<f64>,
    pub axes: [usize; 2],
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDef {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Projection,
    Bridge,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    dim: Spanned<usize>,
    constraints: Vec<ConstraintDef>,
    #[serde(default)]
    potential: PotentialDef,
    theta: Option<Vec<Vec<f64>>>,
    rotation: Option<RotationDef>,
    #[serde(default)]
    scheme: Scheme,
    bounds: Option<BoxDef>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompatSection {
    samples: Spanned<usize>,
    act_tol: Option<Spanned<f64>>,
    refute_tol: Option<Spanned<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateSection {
    #[serde(rename = "T")]
    horizon: Spanned<f64>,
    dt: Spanned<f64>,
    x0: Vec<f64>,
    paths: Option<Spanned<usize>>,
    record_every: Option<Spanned<usize>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Rejection,
    Mcmc,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GibbsSection {
    n: Spanned<usize>,
    #[serde(default)]
    sampler: SamplerKind,
    proposal_scale: Option<Spanned<f64>>,
    thin: Option<Spanned<usize>>,
    chains: Option<Spanned<usize>>,
    burn_in: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReversibilitySection {
    paths: Spanned<usize>,
    #[serde(rename = "T")]
    horizon: Spanned<f64>,
    dt: Spanned<f64>,
    alpha: Option<Spanned<f64>>,
    bins: Option<Spanned<usize>>,
    axes: Option<[usize; 2]>,
    min_paths: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GravityDef {
    Log { c: f64 },
    Zero,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanetSection {
    n: Spanned<usize>,
    d: Spanned<usize>,
    radius: Spanned<f64>,
    r_minus: Spanned<f64>,
    r_plus: Spanned<f64>,
    temperature: Option<Spanned<f64>>,
    elasticity: Option<Spanned<f64>>,
    gravity: Option<GravityDef>,
    simulate: Option<Spanned<PlanetSimulateSection>>,
    curve: Option<Spanned<CurveSection>>,
    check: Option<Spanned<CheckSection>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanetSimulateSection {
    #[serde(rename = "T")]
    horizon: Spanned<f64>,
    dt: Spanned<f64>,
    x0: Option<Vec<f64>>,
    record_every: Option<Spanned<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveSection {
    taus: Spanned<Vec<f64>>,
    eps: Spanned<f64>,
    samples: Spanned<usize>,
    eta: Option<Spanned<f64>>,
    level: Option<Spanned<f64>>,
    #[serde(default)]
    sampler: SamplerKind,
    thin: Option<Spanned<usize>>,
    chains: Option<Spanned<usize>>,
    control_half_width: Option<Spanned<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckSection {
    samples: Spanned<usize>,
    eta: Option<Spanned<f64>>,
}

// ---------------------------------------------------------------- validated plan

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenericModel {
    pub dim: usize,
    pub constraints: Vec<ConstraintDef>,
    pub potential: PotentialDef,
    pub theta: Option<Vec<Vec<f64>>>,
    pub rotation: Option<RotationDef>,
    pub scheme: Scheme,
    pub bounds: Option<BoxDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanetParams {
    pub n: usize,
    pub d: usize,
    pub radius: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub temperature: f64,
    pub elasticity: f64,
    pub gravity: GravityDef,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePlan {
    pub taus: Vec<f64>,
    pub eps: f64,
    pub samples: usize,
    pub eta: f64,
    pub level: f64,
    pub sampler: SamplerKind,
    pub thin: usize,
    pub chains: usize,
    pub control_half_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "plan", rename_all = "kebab-case")]
pub enum Plan {
    CheckCompat {
        model: GenericModel,
        samples: usize,
        act_tol: Option<f64>,
        refute_tol: Option<f64>,
    },
    Simulate {
        model: GenericModel,
        horizon: f64,
        dt: f64,
        x0: Vec<f64>,
        paths: usize,
        record_every: usize,
    },
    SampleGibbs {
        model: GenericModel,
        n: usize,
        sampler: SamplerKind,
        proposal_scale: Option<f64>,
        thin: usize,
        chains: usize,
        burn_in: Option<usize>,
    },
    Reversibility {
        model: GenericModel,
        paths: usize,
        horizon: f64,
        dt: f64,
        alpha: f64,
        bins: usize,
        axes: [usize; 2],
        min_paths: usize,
    },
    PlanetSimulate {
        planet: PlanetParams,
        horizon: f64,
        dt: f64,
        x0: Option<Vec<f64>>,
        record_every: usize,
    },
    PlanetClusteringCurve {
        planet: PlanetParams,
        curve: CurvePlan,
    },
    PlanetCheckModel {
        planet: PlanetParams,
        samples: usize,
        eta: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub invocation: Invocation,
    pub seed: u64,
    pub out: PathBuf,
    pub format: Format,
    pub override_integrability: bool,
    pub plan: Plan,
    /// The configuration text as given, echoed into every manifest.
    pub text: String,
}

/// Values given on the command line; they take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub invocation: Option<Invocation>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub override_integrability: bool,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: Some(self.line(span.start)),
            message: message.into(),
        })
    }

    fn positive(&self, v: &Spanned<f64>, key: &str) -> Result<f64, ParseError> {
        let x = *v.get_ref();
        if x.is_finite() && x > 0.0 {
            Ok(x)
        } else {
            self.err(v.span(), format!("`{key}` must be positive and finite, got {x}"))
        }
    }

    fn opt_positive(&self, v: &Option<Spanned<f64>>, key: &str, default: f64) -> Result<f64, ParseError> {
        v.as_ref().map_or(Ok(default), |v| self.positive(v, key))
    }

    fn count(&self, v: &Spanned<usize>, key: &str) -> Result<usize, ParseError> {
        if *v.get_ref() == 0 {
            return self.err(v.span(), format!("`{key}` must be at least 1"));
        }
        Ok(*v.get_ref())
    }

    fn opt_count(&self, v: &Option<Spanned<usize>>, key: &str, default: usize) -> Result<usize, ParseError> {
        v.as_ref().map_or(Ok(default), |v| self.count(v, key))
    }

    fn open_unit(&self, v: &Option<Spanned<f64>>, key: &str, default: f64) -> Result<f64, ParseError> {
        let Some(v) = v else { return Ok(default) };
        let x = *v.get_ref();
        if x > 0.0 && x < 1.0 {
            Ok(x)
        } else {
            self.err(v.span(), format!("`{key}` must lie in (0, 1), got {x}"))
        }
    }

    fn horizon(&self, horizon: &Spanned<f64>, dt: &Spanned<f64>) -> Result<(f64, f64), ParseError> {
        let t = self.positive(horizon, "T")?;
        let h = self.positive(dt, "dt")?;
        if h >= t {
            return self.err(dt.span(), format!("`dt` = {h} must be smaller than `T` = {t}"));
        }
        Ok((t, h))
    }

    fn missing<T>(&self, what: &str, invocation: Invocation) -> Result<T, ParseError> {
        Err(ParseError {
            line: None,
            message: format!("`{}` needs a [{what}] section", invocation.name()),
        })
    }
}

fn toml_error(text: &str, e: toml::de::Error) -> ParseError {
    let ctx = Ctx { text };
    ParseError {
        line: e.span().map(|s| ctx.line(s.start)),
        message: e.message().trim().to_string(),
    }
}

/// Parse and validate configuration text. Unknown keys, wrong types,
/// nonpositive tolerances and `dt ≥ T` are errors carrying a line number.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, ParseError> {
    let file: FileConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    let ctx = Ctx { text };

    let invocation = match (&file.command, overrides.invocation) {
        (Some(c), Some(o)) if *c.get_ref() != o => {
            return ctx.err(
                c.span(),
                format!("config is for `{}` but `{}` was requested", c.get_ref().name(), o.name()),
            )
        }
        (_, Some(o)) => o,
        (Some(c), None) => *c.get_ref(),
        (None, None) => {
            return Err(ParseError {
                line: None,
                message: "no command: set `command` in the config or name a subcommand".into(),
            })
        }
    };
    let seed = overrides.seed.or(file.seed).ok_or_else(|| ParseError {
        line: None,
        message: "a seed is required: set `seed` in the config or pass --seed".into(),
    })?;
    let out = overrides.out.clone().or(file.out).ok_or_else(|| ParseError {
        line: None,
        message: "an output directory is required: set `out` in the config or pass --out".into(),
    })?;
    let format = overrides.format.or(file.format).unwrap_or(Format::Csv);

    let generic = |ctx: &Ctx| -> Result<GenericModel, ParseError> {
        let Some(m) = &file.model else { return ctx.missing("model", invocation) };
        let span = m.span();
        let m = m.get_ref();
        let dim = ctx.count(&m.dim, "dim")?;
        if m.constraints.is_empty() {
            return ctx.err(span, "`constraints` must not be empty");
        }
        Ok(GenericModel {
            dim,
            constraints: m.constraints.clone(),
            potential: m.potential.clone(),
            theta: m.theta.clone(),
            rotation: m.rotation.clone(),
            scheme: m.scheme,
            bounds: m.bounds.clone(),
        })
    };
    let planet = |ctx: &Ctx| -> Result<(PlanetParams, &PlanetSection), ParseError> {
        let Some(p) = &file.planet else { return ctx.missing("planet", invocation) };
        let p = p.get_ref();
        let params = PlanetParams {
            n: ctx.count(&p.n, "n")?,
            d: ctx.count(&p.d, "d")?,
            radius: ctx.positive(&p.radius, "radius")?,
            r_minus: ctx.positive(&p.r_minus, "r_minus")?,
            r_plus: ctx.positive(&p.r_plus, "r_plus")?,
            temperature: ctx.opt_positive(&p.temperature, "temperature", 1.0)?,
            elasticity: ctx.opt_positive(&p.elasticity, "elasticity", 1.0)?,
            gravity: p.gravity.clone().unwrap_or(GravityDef::Log { c: 1.0 }),
        };
        Ok((params, p))
    };

    let plan = match invocation {
        Invocation::CheckCompat => {
            let model = generic(&ctx)?;
            let Some(s) = &file.check_compat else { return ctx.missing("check_compat", invocation) };
            let s = s.get_ref();
            Plan::CheckCompat {
                model,
                samples: ctx.count(&s.samples, "samples")?,
                act_tol: s.act_tol.as_ref().map(|v| ctx.positive(v, "act_tol")).transpose()?,
                refute_tol: s.refute_tol.as_ref().map(|v| ctx.positive(v, "refute_tol")).transpose()?,
            }
        }
        Invocation::Simulate => {
            let model = generic(&ctx)?;
            let Some(s) = &file.simulate else { return ctx.missing("simulate", invocation) };
            let s = s.get_ref();
            let (horizon, dt) = ctx.horizon(&s.horizon, &s.dt)?;
            Plan::Simulate {
                model,
                horizon,
                dt,
                x0: s.x0.clone(),
                paths: ctx.opt_count(&s.paths, "paths", 1)?,
                record_every: ctx.opt_count(&s.record_every, "record_every", 1)?,
            }
        }
        Invocation::SampleGibbs => {
            let model = generic(&ctx)?;
            let Some(s) = &file.sample_gibbs else { return ctx.missing("sample_gibbs", invocation) };
            let span = s.span();
            let s = s.get_ref();
            let proposal_scale = s.proposal_scale.as_ref().map(|v| ctx.positive(v, "proposal_scale")).transpose()?;
            if s.sampler == SamplerKind::Mcmc && proposal_scale.is_none() {
                return ctx.err(span, "the mcmc sampler needs `proposal_scale`");
            }
            Plan::SampleGibbs {
                model,
                n: ctx.count(&s.n, "n")?,
                sampler: s.sampler,
                proposal_scale,
                thin: ctx.opt_count(&s.thin, "thin", 10)?,
                chains: ctx.opt_count(&s.chains, "chains", 4)?,
                burn_in: s.burn_in,
            }
        }
        Invocation::Reversibility => {
            let model = generic(&ctx)?;
            let Some(s) = &file.reversibility else { return ctx.missing("reversibility", invocation) };
            let s = s.get_ref();
            let (horizon, dt) = ctx.horizon(&s.horizon, &s.dt)?;
            Plan::Reversibility {
                model,
                paths: ctx.count(&s.paths, "paths")?,
                horizon,
                dt,
                alpha: ctx.open_unit(&s.alpha, "alpha", 0.01)?,
                bins: ctx.opt_count(&s.bins, "bins", 3)?,
                axes: s.axes.unwrap_or([0, 1]),
                min_paths: s.min_paths.unwrap_or(200),
            }
        }
        Invocation::PlanetSimulate => {
            let (planet, p) = planet(&ctx)?;
            let Some(s) = &p.simulate else { return ctx.missing("planet.simulate", invocation) };
            let s = s.get_ref();
            let (horizon, dt) = ctx.horizon(&s.horizon, &s.dt)?;
            Plan::PlanetSimulate {
                planet,
                horizon,
                dt,
                x0: s.x0.clone(),
                record_every: ctx.opt_count(&s.record_every, "record_every", 1)?,
            }
        }
        Invocation::PlanetClusteringCurve => {
            let (planet, p) = planet(&ctx)?;
            let Some(s) = &p.curve else { return ctx.missing("planet.curve", invocation) };
            let s = s.get_ref();
            if s.taus.get_ref().is_empty() {
                return ctx.err(s.taus.span(), "`taus` must not be empty");
            }
            if let Some(t) = s.taus.get_ref().iter().find(|t| !(t.is_finite() && **t > 0.0)) {
                return ctx.err(s.taus.span(), format!("every temperature in `taus` must be positive, got {t}"));
            }
            let curve = CurvePlan {
                taus: s.taus.get_ref().clone(),
                eps: ctx.positive(&s.eps, "eps")?,
                samples: ctx.count(&s.samples, "samples")?,
                eta: ctx.opt_positive(&s.eta, "eta", 0.1)?,
                level: ctx.open_unit(&s.level, "level", 0.95)?,
                sampler: s.sampler,
                thin: ctx.opt_count(&s.thin, "thin", 50)?,
                chains: ctx.opt_count(&s.chains, "chains", 8)?,
                control_half_width: s
                    .control_half_width
                    .as_ref()
                    .map(|v| ctx.positive(v, "control_half_width"))
                    .transpose()?,
            };
            Plan::PlanetClusteringCurve { planet, curve }
        }
        Invocation::PlanetCheckModel => {
            let (planet, p) = planet(&ctx)?;
            let Some(s) = &p.check else { return ctx.missing("planet.check", invocation) };
            let s = s.get_ref();
            Plan::PlanetCheckModel {
                planet,
                samples: ctx.count(&s.samples, "samples")?,
                eta: ctx.opt_positive(&s.eta, "eta", 0.1)?,
            }
        }
    };

    Ok(RunConfig {
        invocation,
        seed,
        out,
        format,
        override_integrability: overrides.override_integrability,
        plan,
        text: text.to_string(),
    })
}
