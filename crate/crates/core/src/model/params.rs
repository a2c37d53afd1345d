use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvVariant, ModelConfig, ModelError, STRUCT_DIM};
use crate::autodiff::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadInit {
    /// Classifier weight starts at zero, so every first prediction is 0.5.
    #[default]
    Zero,
    Glorot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectorParams {
    pub text_w: usize,
    pub text_b: usize,
    pub struct_w: usize,
    pub struct_b: usize,
    pub alpha: Option<usize>,
    pub beta: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvParams {
    Gat {
        weight: usize,
        att_src: usize,
        att_dst: usize,
        bias: usize,
    },
    GatV2 {
        lin_l_w: usize,
        lin_l_b: usize,
        lin_r_w: usize,
        lin_r_b: usize,
        att: usize,
        bias: usize,
    },
    Transformer {
        query_w: usize,
        query_b: usize,
        key_w: usize,
        value_w: usize,
        value_b: usize,
        skip_w: usize,
        skip_b: usize,
    },
}

/// Index of every parameter tensor, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub projector: ProjectorParams,
    pub convs: Vec<(ConvParams, usize)>,
    pub scorer_w: usize,
    pub scorer_b: usize,
    pub cross_q: usize,
    pub cross_k: usize,
    pub cross_v: usize,
    pub head_w: usize,
    pub head_b: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name: name.into(),
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
        let w = self.add(
            format!("{prefix}.weight"),
            fan_in,
            fan_out,
            Init::Glorot { fan_in, fan_out },
        );
        let b = self.add(format!("{prefix}.bias"), 1, fan_out, Init::Zeros);
        (w, b)
    }
}

impl Layout {
    pub fn new(config: &ModelConfig, head: HeadInit) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder { specs: Vec::new() };
        let common = config.common_dim();
        let d = config.hidden;

        let (text_w, text_b) = b.linear("proj.text", config.text_dim, common);
        let (struct_w, struct_b) = b.linear("proj.struct", STRUCT_DIM, common);
        let (alpha, beta) = if config.weighted_embeddings {
            (
                Some(b.add("proj.alpha", 1, 1, Init::Ones)),
                Some(b.add("proj.beta", 1, 1, Init::Ones)),
            )
        } else {
            (None, None)
        };
        let projector = ProjectorParams {
            text_w,
            text_b,
            struct_w,
            struct_b,
            alpha,
            beta,
        };

        let mut convs = Vec::with_capacity(config.layers());
        let mut fan_in = common;
        for (l, &heads) in config.heads.iter().enumerate() {
            let c = d / heads;
            let p = format!("conv{}", l + 1);
            let att = Init::Glorot {
                fan_in: heads,
                fan_out: c,
            };
            let conv = match config.conv {
                ConvVariant::Gat => ConvParams::Gat {
                    weight: b.add(format!("{p}.weight"), fan_in, d, Init::Glorot { fan_in, fan_out: d }),
                    att_src: b.add(format!("{p}.att_src"), 1, d, att),
                    att_dst: b.add(format!("{p}.att_dst"), 1, d, att),
                    bias: b.add(format!("{p}.bias"), 1, d, Init::Zeros),
                },
                ConvVariant::GatV2 => {
                    let (lin_l_w, lin_l_b) = b.linear(&format!("{p}.lin_l"), fan_in, d);
                    let (lin_r_w, lin_r_b) = b.linear(&format!("{p}.lin_r"), fan_in, d);
                    ConvParams::GatV2 {
                        lin_l_w,
                        lin_l_b,
                        lin_r_w,
                        lin_r_b,
                        att: b.add(format!("{p}.att"), 1, d, att),
                        bias: b.add(format!("{p}.bias"), 1, d, Init::Zeros),
                    }
                }
                ConvVariant::Transformer => {
                    let (query_w, query_b) = b.linear(&format!("{p}.query"), fan_in, d);
                    // A key bias shifts every logit of a destination equally, so
                    // softmax cancels it; it is left out.
                    let key_w = b.add(
                        format!("{p}.key.weight"),
                        fan_in,
                        d,
                        Init::Glorot { fan_in, fan_out: d },
                    );
                    let (value_w, value_b) = b.linear(&format!("{p}.value"), fan_in, d);
                    let (skip_w, skip_b) = b.linear(&format!("{p}.skip"), fan_in, d);
                    ConvParams::Transformer {
                        query_w,
                        query_b,
                        key_w,
                        value_w,
                        value_b,
                        skip_w,
                        skip_b,
                    }
                }
            };
            convs.push((conv, heads));
            fan_in = d;
        }

        let (scorer_w, scorer_b) = b.linear("scorer", d, 1);
        let sq = Init::Glorot { fan_in: d, fan_out: d };
        let cross_q = b.add("cross.query.weight", d, d, sq);
        let cross_k = b.add("cross.key.weight", d, d, sq);
        let cross_v = b.add("cross.value.weight", d, d, sq);
        let f = config.head_input_dim();
        let head_init = match head {
            HeadInit::Zero => Init::Zeros,
            HeadInit::Glorot => Init::Glorot { fan_in: f, fan_out: 1 },
        };
        let head_w = b.add("head.weight", f, 1, head_init);
        let head_b = b.add("head.bias", 1, 1, Init::Zeros);

        Ok(Self {
            specs: b.specs,
            projector,
            convs,
            scorer_w,
            scorer_b,
            cross_q,
            cross_k,
            cross_v,
            head_w,
            head_b,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.specs.iter().map(|s| s.rows * s.cols).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Configuration, layout and parameter values of one model.
#[derive(Debug, Clone)]
pub struct Classifier<T: Scalar = f32> {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) params: Vec<Tensor<T>>,
}

impl<T: Scalar> PartialEq for Classifier<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl<T: Scalar> Classifier<T> {
    /// Glorot-uniform weights, zero biases, α = β = 1.
    pub fn new(config: ModelConfig, seed: u64, head: HeadInit) -> Result<Self, ModelError> {
        let layout = Layout::new(&config, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(s.rows, s.cols),
                Init::Ones => Tensor::full(s.rows, s.cols, T::ONE),
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit);
                    Tensor::from_fn(s.rows, s.cols, |_, _| T::from_f64(dist.sample(&mut rng)))
                }
            })
            .collect();
        Ok(Self { config, layout, params })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        let layout = Layout::new(&config, HeadInit::Zero)?;
        if params.len() != layout.specs.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.specs.len(),
                params.len()
            )));
        }
        for (s, p) in layout.specs.iter().zip(&params) {
            if p.shape() != [s.rows, s.cols] {
                return Err(ModelError::Checkpoint(format!(
                    "{} has shape {:?}, expected [{}, {}]",
                    s.name,
                    p.shape(),
                    s.rows,
                    s.cols
                )));
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.layout.index_of(name).map(move |i| &mut self.params[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layout.specs.iter().map(|s| s.name.as_str())
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.layout.parameter_count()
    }

    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Puts every parameter on `tape` as a borrowed trainable leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_count() {
        let layout = Layout::new(&ModelConfig::default(), HeadInit::Zero).unwrap();
        let proj: usize = layout
            .specs
            .iter()
            .filter(|s| s.name.starts_with("proj."))
            .map(|s| s.rows * s.cols)
            .sum();
        assert_eq!(proj, 768 * 773 + 773 + 5 * 773 + 773 + 2);
    }

    #[test]
    fn unweighted_drops_coefficients() {
        let cfg = ModelConfig {
            weighted_embeddings: false,
            ..Default::default()
        };
        let full = Layout::new(&ModelConfig::default(), HeadInit::Zero).unwrap();
        let layout = Layout::new(&cfg, HeadInit::Zero).unwrap();
        assert_eq!(full.parameter_count() - layout.parameter_count(), 2);
        assert!(layout.index_of("proj.alpha").is_none());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig {
            text_dim: 8,
            hidden: 8,
            ..Default::default()
        };
        let a = Classifier::<f32>::new(cfg.clone(), 3, HeadInit::Glorot).unwrap();
        let b = Classifier::<f32>::new(cfg.clone(), 3, HeadInit::Glorot).unwrap();
        let c = Classifier::<f32>::new(cfg, 4, HeadInit::Glorot).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.param("proj.alpha").unwrap().item(), 1.0);
        assert!(a.param("conv1.query.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_must_divide_hidden() {
        let cfg = ModelConfig {
            hidden: 10,
            heads: vec![4, 2],
            ..Default::default()
        };
        assert!(matches!(Layout::new(&cfg, HeadInit::Zero), Err(ModelError::Config(_))));
    }
}
