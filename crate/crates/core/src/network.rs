//! The sequence-spectrogram network: a 1-D residual branch over the raw
//! series and a 2-D residual branch over the spectrogram images, fused by
//! concatenating their pooled features ahead of a linear classifier.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Mode, NormMode, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, string_id, Stream};

fn default_stem_channels() -> usize {
    64
}
fn default_blocks() -> usize {
    4
}
fn default_downsample() -> usize {
    3
}
fn default_feature_dim() -> usize {
    128
}
fn default_stem_kernel() -> usize {
    7
}
fn default_block_kernel() -> usize {
    3
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_bn_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsnnConfig {
    pub num_classes: usize,
    pub series_channels: usize,
    pub image_channels: usize,
    #[serde(default = "default_stem_channels")]
    pub stem_channels: usize,
    #[serde(default = "default_blocks")]
    pub blocks_per_branch: usize,
    /// 1-based index of the block that halves resolution and doubles channels.
    #[serde(default = "default_downsample")]
    pub downsample_block_index: usize,
    #[serde(default = "default_feature_dim")]
    pub branch_feature_dim: usize,
    #[serde(default = "default_stem_kernel")]
    pub stem_kernel_1d: usize,
    #[serde(default = "default_stem_kernel")]
    pub stem_kernel_2d: usize,
    #[serde(default = "default_block_kernel")]
    pub block_kernel: usize,
    /// Width of an optional hidden layer in the classifier heads.
    #[serde(default)]
    pub head_hidden: Option<usize>,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
}

impl SsnnConfig {
    /// Default widths and depths for the given task shape.
    pub fn new(num_classes: usize, series_channels: usize, image_channels: usize) -> Self {
        Self {
            num_classes,
            series_channels,
            image_channels,
            stem_channels: default_stem_channels(),
            blocks_per_branch: default_blocks(),
            downsample_block_index: default_downsample(),
            branch_feature_dim: default_feature_dim(),
            stem_kernel_1d: default_stem_kernel(),
            stem_kernel_2d: default_stem_kernel(),
            block_kernel: default_block_kernel(),
            head_hidden: None,
            bn_momentum: default_bn_momentum(),
            bn_eps: default_bn_eps(),
        }
    }

    /// Scales the stem width; the fused feature size follows.
    pub fn with_stem_channels(mut self, c: usize) -> Self {
        self.stem_channels = c;
        self.branch_feature_dim = 2 * c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(invalid(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.series_channels == 0 || self.image_channels == 0 || self.stem_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.blocks_per_branch == 0 {
            return fail("blocks_per_branch must be positive".into());
        }
        if self.downsample_block_index == 0 || self.downsample_block_index > self.blocks_per_branch {
            return fail(format!(
                "downsample_block_index {} must lie in 1..={}",
                self.downsample_block_index, self.blocks_per_branch
            ));
        }
        if self.branch_feature_dim != 2 * self.stem_channels {
            return fail(format!(
                "branch_feature_dim {} must equal the post-downsampling width {}",
                self.branch_feature_dim,
                2 * self.stem_channels
            ));
        }
        for (name, k) in [
            ("stem_kernel_1d", self.stem_kernel_1d),
            ("stem_kernel_2d", self.stem_kernel_2d),
            ("block_kernel", self.block_kernel),
        ] {
            if k % 2 == 0 {
                return fail(format!("{name} must be odd, got {k}"));
            }
        }
        if self.head_hidden == Some(0) {
            return fail("head_hidden must be positive when set".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
            return fail("bn_momentum must lie in [0, 1] and bn_eps must be positive".into());
        }
        Ok(())
    }

    /// Block specs of one branch, in order.
    pub fn block_specs(&self) -> Vec<ResidualBlockSpec> {
        let mut ch = self.stem_channels;
        (1..=self.blocks_per_branch)
            .map(|i| {
                let down = i == self.downsample_block_index;
                let out = if down { 2 * ch } else { ch };
                let spec = ResidualBlockSpec {
                    in_channels: ch,
                    out_channels: out,
                    stride: if down { 2 } else { 1 },
                    kernel: self.block_kernel,
                    has_projection_shortcut: down,
                };
                ch = out;
                spec
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub kernel: usize,
    pub has_projection_shortcut: bool,
}

impl ResidualBlockSpec {
    pub fn validate(&self) -> Result<()> {
        if (self.stride == 2) != self.has_projection_shortcut {
            return Err(invalid("a projection shortcut is used exactly when stride is 2"));
        }
        if self.stride == 1 && self.in_channels != self.out_channels {
            return Err(invalid("identity shortcut needs equal input and output channels"));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(invalid("block stride must be 1 or 2"));
        }
        Ok(())
    }
}

/// Which inputs feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Fusion,
    SeriesOnly,
    ImageOnly,
}

/// State threaded through one forward pass.
pub struct Pass<'g> {
    pub graph: &'g mut Graph,
    pub mode: Mode,
    /// Batch statistics gathered in training mode, keyed by layer path.
    pub batch_stats: Vec<(String, BatchStats)>,
}

impl<'g> Pass<'g> {
    pub fn new(graph: &'g mut Graph, mode: Mode) -> Self {
        Self {
            graph,
            mode,
            batch_stats: Vec::new(),
        }
    }
}

fn kaiming_uniform(path: &str, shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = Stream::new(derive_seed(&[seed, string_id(path)]));
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    /// `spatial_dims` is 1 or 2; kernels are square in 2-D.
    fn new(path: &str, spatial_dims: usize, in_ch: usize, out_ch: usize, k: usize, stride: usize, seed: u64) -> Self {
        let shape = if spatial_dims == 1 {
            vec![out_ch, in_ch, k]
        } else {
            vec![out_ch, in_ch, k, k]
        };
        let fan_in = in_ch * k.pow(spatial_dims as u32);
        Self {
            weight: kaiming_uniform(&format!("{path}/weight"), &shape, fan_in, seed),
            bias: Tensor::zeros(&[out_ch]),
            stride,
            padding: k / 2,
        }
    }

    pub fn forward(&self, pass: &mut Pass, path: &str, x: Var) -> Result<Var> {
        let g = &mut *pass.graph;
        let w = g.param(&format!("{path}/weight"), &self.weight);
        let b = g.param(&format!("{path}/bias"), &self.bias);
        if self.weight.shape().len() == 3 {
            g.conv1d(x, w, b, self.stride, self.padding)
        } else {
            g.conv2d(x, w, b, self.stride, self.padding)
        }
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        f(format!("{path}/weight"), &self.weight, true);
        f(format!("{path}/bias"), &self.bias, true);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        f(format!("{path}/weight"), &mut self.weight, true);
        f(format!("{path}/bias"), &mut self.bias, true);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(ch: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: Tensor::full(&[ch], 1.0),
            beta: Tensor::zeros(&[ch]),
            running_mean: Tensor::zeros(&[ch]),
            running_var: Tensor::full(&[ch], 1.0),
            momentum,
            eps,
        }
    }

    pub fn forward(&self, pass: &mut Pass, path: &str, x: Var) -> Result<Var> {
        let g = &mut *pass.graph;
        let gamma = g.param(&format!("{path}/gamma"), &self.gamma);
        let beta = g.param(&format!("{path}/beta"), &self.beta);
        let mode = match pass.mode {
            Mode::Train => NormMode::Train,
            Mode::Eval => NormMode::Eval {
                mean: self.running_mean.data(),
                var: self.running_var.data(),
            },
        };
        let (y, stats) = g.batchnorm(x, gamma, beta, mode, self.eps)?;
        if let Some(s) = stats {
            pass.batch_stats.push((path.to_string(), s));
        }
        Ok(y)
    }

    fn apply_stats(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        f(format!("{path}/gamma"), &self.gamma, true);
        f(format!("{path}/beta"), &self.beta, true);
        f(format!("{path}/running_mean"), &self.running_mean, false);
        f(format!("{path}/running_var"), &self.running_var, false);
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        f(format!("{path}/gamma"), &mut self.gamma, true);
        f(format!("{path}/beta"), &mut self.beta, true);
        f(format!("{path}/running_mean"), &mut self.running_mean, false);
        f(format!("{path}/running_var"), &mut self.running_var, false);
    }
}

/// Two stacked convolutions with a shortcut around them; the final ReLU
/// follows the addition.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub spec: ResidualBlockSpec,
    pub conv1: Conv,
    pub bn1: BatchNorm,
    pub conv2: Conv,
    pub bn2: BatchNorm,
    pub shortcut: Option<Conv>,
}

impl ResidualBlock {
    fn new(path: &str, dims: usize, spec: ResidualBlockSpec, cfg: &SsnnConfig, seed: u64) -> Self {
        let (i, o, k) = (spec.in_channels, spec.out_channels, spec.kernel);
        let bn = || BatchNorm::new(o, cfg.bn_momentum, cfg.bn_eps);
        Self {
            spec,
            conv1: Conv::new(&format!("{path}/conv1"), dims, i, o, k, spec.stride, seed),
            bn1: bn(),
            conv2: Conv::new(&format!("{path}/conv2"), dims, o, o, k, 1, seed),
            bn2: bn(),
            shortcut: spec
                .has_projection_shortcut
                .then(|| Conv::new(&format!("{path}/shortcut"), dims, i, o, 1, spec.stride, seed)),
        }
    }

    pub fn forward(&self, pass: &mut Pass, path: &str, x: Var) -> Result<Var> {
        let h = self.conv1.forward(pass, &format!("{path}/conv1"), x)?;
        let h = self.bn1.forward(pass, &format!("{path}/bn1"), h)?;
        let h = pass.graph.relu(h);
        let h = self.conv2.forward(pass, &format!("{path}/conv2"), h)?;
        let h = self.bn2.forward(pass, &format!("{path}/bn2"), h)?;
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(pass, &format!("{path}/shortcut"), x)?,
            None => x,
        };
        let sum = pass.graph.add(h, skip)?;
        Ok(pass.graph.relu(sum))
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        self.conv1.visit(&format!("{path}/conv1"), f);
        self.bn1.visit(&format!("{path}/bn1"), f);
        self.conv2.visit(&format!("{path}/conv2"), f);
        self.bn2.visit(&format!("{path}/bn2"), f);
        if let Some(s) = &self.shortcut {
            s.visit(&format!("{path}/shortcut"), f);
        }
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        self.conv1.visit_mut(&format!("{path}/conv1"), f);
        self.bn1.visit_mut(&format!("{path}/bn1"), f);
        self.conv2.visit_mut(&format!("{path}/conv2"), f);
        self.bn2.visit_mut(&format!("{path}/bn2"), f);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&format!("{path}/shortcut"), f);
        }
    }
}

/// Stem (conv, batchnorm, ReLU, max-pool), residual blocks, then global
/// average pooling down to one feature vector per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub spatial_dims: usize,
    pub stem: Conv,
    pub stem_bn: BatchNorm,
    pub blocks: Vec<ResidualBlock>,
}

impl Branch {
    fn new(path: &str, dims: usize, in_ch: usize, cfg: &SsnnConfig, seed: u64) -> Self {
        let k = if dims == 1 { cfg.stem_kernel_1d } else { cfg.stem_kernel_2d };
        Self {
            spatial_dims: dims,
            stem: Conv::new(&format!("{path}/stem/conv"), dims, in_ch, cfg.stem_channels, k, 2, seed),
            stem_bn: BatchNorm::new(cfg.stem_channels, cfg.bn_momentum, cfg.bn_eps),
            blocks: cfg
                .block_specs()
                .into_iter()
                .enumerate()
                .map(|(i, spec)| ResidualBlock::new(&format!("{path}/block{}", i + 1), dims, spec, cfg, seed))
                .collect(),
        }
    }

    pub fn forward(&self, pass: &mut Pass, path: &str, x: Var) -> Result<Var> {
        let h = self.stem.forward(pass, &format!("{path}/stem/conv"), x)?;
        let h = self.stem_bn.forward(pass, &format!("{path}/stem/bn"), h)?;
        let h = pass.graph.relu(h);
        let mut h = if self.spatial_dims == 1 {
            pass.graph.maxpool1d(h, 3, 2, 1)?
        } else {
            pass.graph.maxpool2d(h, 3, 2, 1)?
        };
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(pass, &format!("{path}/block{}", i + 1), h)?;
        }
        pass.graph.global_avg_pool(h)
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        self.stem.visit(&format!("{path}/stem/conv"), f);
        self.stem_bn.visit(&format!("{path}/stem/bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{path}/block{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        self.stem.visit_mut(&format!("{path}/stem/conv"), f);
        self.stem_bn.visit_mut(&format!("{path}/stem/bn"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{path}/block{}", i + 1), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn new(path: &str, inp: usize, out: usize, seed: u64) -> Self {
        Self {
            weight: kaiming_uniform(&format!("{path}/weight"), &[out, inp], inp, seed),
            bias: Tensor::zeros(&[out]),
        }
    }
}

/// Classifier: one linear layer, or linear-ReLU-linear with a hidden width.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: Vec<Linear>,
}

impl Head {
    fn new(path: &str, inp: usize, classes: usize, hidden: Option<usize>, seed: u64) -> Self {
        let layers = match hidden {
            None => vec![Linear::new(&format!("{path}/0"), inp, classes, seed)],
            Some(h) => vec![
                Linear::new(&format!("{path}/0"), inp, h, seed),
                Linear::new(&format!("{path}/1"), h, classes, seed),
            ],
        };
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[1]
    }

    pub fn forward(&self, pass: &mut Pass, path: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = pass.graph.relu(h);
            }
            let g = &mut *pass.graph;
            let w = g.param(&format!("{path}/{i}/weight"), &layer.weight);
            let b = g.param(&format!("{path}/{i}/bias"), &layer.bias);
            h = g.linear(h, w, b)?;
        }
        Ok(h)
    }

    fn visit<'a>(&'a self, path: &str, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(format!("{path}/{i}/weight"), &l.weight, true);
            f(format!("{path}/{i}/bias"), &l.bias, true);
        }
    }

    fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(format!("{path}/{i}/weight"), &mut l.weight, true);
            f(format!("{path}/{i}/bias"), &mut l.bias, true);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsnnModel {
    pub config: SsnnConfig,
    pub series_branch: Branch,
    pub image_branch: Branch,
    /// Classifier over the concatenated features of both branches.
    pub fusion_head: Head,
    /// Classifiers used when only one branch is active.
    pub series_head: Head,
    pub image_head: Head,
}

/// Builds a model with seeded Kaiming-uniform weights, zero biases, unit
/// batchnorm scales and identity running statistics.
pub fn build_ssnn(cfg: &SsnnConfig, seed: u64) -> Result<SsnnModel> {
    cfg.validate()?;
    let f = cfg.branch_feature_dim;
    let c = cfg.num_classes;
    Ok(SsnnModel {
        config: cfg.clone(),
        series_branch: Branch::new("series", 1, cfg.series_channels, cfg, seed),
        image_branch: Branch::new("image", 2, cfg.image_channels, cfg, seed),
        fusion_head: Head::new("fusion_head", 2 * f, c, cfg.head_hidden, seed),
        series_head: Head::new("series_head", f, c, cfg.head_hidden, seed),
        image_head: Head::new("image_head", f, c, cfg.head_hidden, seed),
    })
}

impl SsnnModel {
    /// Visits every stored tensor with its path; the flag marks trainable
    /// parameters (running statistics are not).
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor, bool)) {
        self.series_branch.visit("series", f);
        self.image_branch.visit("image", f);
        self.fusion_head.visit("fusion_head", f);
        self.series_head.visit("series_head", f);
        self.image_head.visit("image_head", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        self.series_branch.visit_mut("series", f);
        self.image_branch.visit_mut("image", f);
        self.fusion_head.visit_mut("fusion_head", f);
        self.series_head.visit_mut("series_head", f);
        self.image_head.visit_mut("image_head", f);
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t, trainable| out.push((name, t, trainable)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.numel())
            .sum()
    }

    fn check_series(&self, g: &Graph, v: Var) -> Result<usize> {
        let s = g.shape(v);
        let cfg = &self.config;
        if s.len() != 3 || s[1] != cfg.series_channels {
            return Err(Error::Shape(format!(
                "series input must be [batch, {}, length], got {s:?}",
                cfg.series_channels
            )));
        }
        if s[2] < cfg.stem_kernel_1d {
            return Err(Error::Shape(format!(
                "series length {} is shorter than the stem kernel {}",
                s[2], cfg.stem_kernel_1d
            )));
        }
        Ok(s[0])
    }

    fn check_images(&self, g: &Graph, v: Var) -> Result<usize> {
        let s = g.shape(v);
        let cfg = &self.config;
        if s.len() != 4 || s[1] != cfg.image_channels {
            return Err(Error::Shape(format!(
                "image input must be [batch, {}, height, width], got {s:?}",
                cfg.image_channels
            )));
        }
        if s[2] < cfg.stem_kernel_2d || s[3] < cfg.stem_kernel_2d {
            return Err(Error::Shape(format!(
                "image {}x{} is smaller than the stem kernel {}",
                s[2], s[3], cfg.stem_kernel_2d
            )));
        }
        Ok(s[0])
    }

    fn logits_in(&self, pass: &mut Pass, modality: Modality, series: Option<Var>, images: Option<Var>) -> Result<Var> {
        let need = |v: Option<Var>, what: &str| {
            v.ok_or_else(|| invalid(format!("{modality:?} mode needs a {what} input")))
        };
        match modality {
            Modality::Fusion => {
                let (s, i) = (need(series, "series")?, need(images, "image")?);
                let (bs, bi) = (self.check_series(pass.graph, s)?, self.check_images(pass.graph, i)?);
                if bs != bi {
                    return Err(Error::Shape(format!("series batch {bs} != image batch {bi}")));
                }
                let fs = self.series_branch.forward(pass, "series", s)?;
                let fi = self.image_branch.forward(pass, "image", i)?;
                let fused = pass.graph.concat(fs, fi)?;
                self.fusion_head.forward(pass, "fusion_head", fused)
            }
            Modality::SeriesOnly => {
                let s = need(series, "series")?;
                self.check_series(pass.graph, s)?;
                let fs = self.series_branch.forward(pass, "series", s)?;
                self.series_head.forward(pass, "series_head", fs)
            }
            Modality::ImageOnly => {
                let i = need(images, "image")?;
                self.check_images(pass.graph, i)?;
                let fi = self.image_branch.forward(pass, "image", i)?;
                self.image_head.forward(pass, "image_head", fi)
            }
        }
    }

    fn apply_batch_stats(&mut self, stats: Vec<(String, BatchStats)>) {
        let mut by_path: std::collections::HashMap<String, BatchStats> = stats.into_iter().collect();
        let mut apply = |bn: &mut BatchNorm, path: String| {
            if let Some(s) = by_path.remove(&path) {
                bn.apply_stats(&s);
            }
        };
        for (prefix, branch) in [("series", &mut self.series_branch), ("image", &mut self.image_branch)] {
            apply(&mut branch.stem_bn, format!("{prefix}/stem/bn"));
            for (i, b) in branch.blocks.iter_mut().enumerate() {
                apply(&mut b.bn1, format!("{prefix}/block{}/bn1", i + 1));
                apply(&mut b.bn2, format!("{prefix}/block{}/bn2", i + 1));
            }
        }
    }

    /// Logits for `modality`. Training mode uses batch statistics and folds
    /// them into the running estimates once the pass completes.
    pub fn run(&mut self, g: &mut Graph, modality: Modality, series: Option<Var>, images: Option<Var>, mode: Mode) -> Result<Var> {
        let mut pass = Pass::new(g, mode);
        let out = self.logits_in(&mut pass, modality, series, images)?;
        let stats = std::mem::take(&mut pass.batch_stats);
        self.apply_batch_stats(stats);
        Ok(out)
    }

    /// Eval-mode logits; leaves the model untouched.
    pub fn infer(&self, g: &mut Graph, modality: Modality, series: Option<Var>, images: Option<Var>) -> Result<Var> {
        let mut pass = Pass::new(g, Mode::Eval);
        self.logits_in(&mut pass, modality, series, images)
    }

    /// Fused logits `[batch, num_classes]`.
    pub fn forward(&mut self, g: &mut Graph, series: Var, images: Var, mode: Mode) -> Result<Var> {
        self.run(g, Modality::Fusion, Some(series), Some(images), mode)
    }

    /// Logits from one branch and its own head. The input rank must match
    /// the requested modality (3 for series, 4 for images).
    pub fn forward_single_branch(&mut self, g: &mut Graph, modality: Modality, input: Var, mode: Mode) -> Result<Var> {
        let rank = g.shape(input).len();
        match (modality, rank) {
            (Modality::SeriesOnly, 3) => self.run(g, modality, Some(input), None, mode),
            (Modality::ImageOnly, 4) => self.run(g, modality, None, Some(input), mode),
            (Modality::Fusion, _) => Err(invalid("forward_single_branch needs a single-branch modality")),
            _ => Err(invalid(format!(
                "{modality:?} input has rank {rank}, expected {}",
                if modality == Modality::SeriesOnly { 3 } else { 4 }
            ))),
        }
    }
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Tensor) -> Result<Vec<usize>> {
    let s = logits.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(invalid(format!("predict expects [batch, classes>=2], got {s:?}")));
    }
    Ok(logits
        .data()
        .chunks(s[1])
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect())
}
