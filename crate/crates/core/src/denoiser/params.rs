use rand::Rng;

use crate::error::{Error, Result};

/// Hyperparameters of the encoder-decoder denoiser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    /// Channel width per resolution level; `widths.len() - 1` downsampling stages.
    pub widths: Vec<usize>,
    /// Sinusoidal noise-embedding dimension (even).
    pub emb_dim: usize,
    /// Upper bound on normalization groups per layer.
    pub max_groups: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64],
            emb_dim: 16,
            max_groups: 8,
        }
    }
}

impl Architecture {
    /// The small configuration used for gradient checks and quick runs.
    pub fn tiny() -> Self {
        Self {
            widths: vec![4, 8],
            emb_dim: 8,
            max_groups: 8,
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    /// Spatial dimensions must be divisible by this factor.
    pub fn downsampling_factor(&self) -> usize {
        1 << self.depth()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::param("architecture needs at least one width"));
        }
        if self.widths.iter().any(|&w| w < 2) {
            return Err(Error::param("every channel width must be at least 2"));
        }
        if self.emb_dim == 0 || self.emb_dim % 2 != 0 {
            return Err(Error::param("embedding dimension must be even and positive"));
        }
        if self.max_groups == 0 {
            return Err(Error::param("max_groups must be positive"));
        }
        Ok(())
    }

    /// Group count for a normalization over `channels`: the largest divisor
    /// of `channels` not above `min(max_groups, channels / 2)`, so every
    /// group spans at least two channels.
    pub fn groups_for(&self, channels: usize) -> usize {
        let cap = self.max_groups.min(channels / 2).max(1);
        (1..=cap).rev().find(|g| channels % g == 0).unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvSlot {
    pub cin: usize,
    pub cout: usize,
    pub weight: usize,
    pub bias: usize,
}

impl ConvSlot {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }
}

/// Linear head producing per-channel `(gamma, beta)` from the embedding.
#[derive(Clone, Debug)]
pub(crate) struct ModSlot {
    pub channels: usize,
    pub groups: usize,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ResSlot {
    pub norm: ModSlot,
    pub conv: ConvSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub emb_weight: usize,
    pub emb_bias: usize,
    pub conv_in: ConvSlot,
    pub enc: Vec<ResSlot>,
    pub down: Vec<ConvSlot>,
    pub mid: ResSlot,
    pub up: Vec<ConvSlot>,
    pub dec: Vec<ResSlot>,
    pub out_norm: ModSlot,
    pub out_conv: ConvSlot,
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

struct Allocator<'a> {
    arch: &'a Architecture,
    tensors: Vec<TensorInfo>,
    next: usize,
}

impl Allocator<'_> {
    fn alloc(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo {
            name,
            shape,
            offset,
        });
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> ConvSlot {
        let weight = self.alloc(format!("{name}.weight"), vec![cout, cin, 3, 3]);
        let bias = self.alloc(format!("{name}.bias"), vec![cout]);
        ConvSlot {
            cin,
            cout,
            weight,
            bias,
        }
    }

    fn modulation(&mut self, name: &str, channels: usize) -> ModSlot {
        let d = self.arch.emb_dim;
        let weight = self.alloc(format!("{name}.mod.weight"), vec![2 * channels, d]);
        let bias = self.alloc(format!("{name}.mod.bias"), vec![2 * channels]);
        ModSlot {
            channels,
            groups: self.arch.groups_for(channels),
            weight,
            bias,
        }
    }

    fn res(&mut self, name: &str, channels: usize) -> ResSlot {
        ResSlot {
            norm: self.modulation(&format!("{name}.norm"), channels),
            conv: self.conv(&format!("{name}.conv"), channels, channels),
        }
    }
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut a = Allocator {
            arch,
            tensors: Vec::new(),
            next: 0,
        };
        let d = arch.emb_dim;
        let w = &arch.widths;
        let emb_weight = a.alloc("embed.weight".into(), vec![d, d]);
        let emb_bias = a.alloc("embed.bias".into(), vec![d]);
        let conv_in = a.conv("conv_in", 2, w[0]);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..arch.depth() {
            enc.push(a.res(&format!("enc{l}"), w[l]));
            down.push(a.conv(&format!("down{l}"), w[l], w[l + 1]));
        }
        let mid = a.res("mid", w[arch.depth()]);
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..arch.depth() {
            up.push(a.conv(&format!("up{l}"), w[l + 1], w[l]));
            dec.push(a.res(&format!("dec{l}"), w[l]));
        }
        let out_norm = a.modulation("out", w[0]);
        let out_conv = a.conv("out_conv", w[0], 1);
        Layout {
            emb_weight,
            emb_bias,
            conv_in,
            enc,
            down,
            mid,
            up,
            dec,
            out_norm,
            out_conv,
            total: a.next,
            tensors: a.tensors,
        }
    }
}

/// All learnable parameters of the denoiser, stored as one flat vector in
/// tensor order. [`DenoiserParams::tensors`] maps names to flat ranges.
#[derive(Clone, Debug)]
pub struct DenoiserParams {
    arch: Architecture,
    pub(crate) layout: Layout,
    values: Vec<f64>,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.values == other.values
    }
}

/// Initialization options.
#[derive(Clone, Copy, Debug)]
pub struct InitOptions {
    /// Start with a zero output convolution so the network predicts 0.
    pub zero_output_head: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            zero_output_head: true,
        }
    }
}

impl DenoiserParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let values = vec![0.0; layout.total];
        Ok(Self {
            arch,
            layout,
            values,
        })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if values.len() != p.values.len() {
            return Err(Error::Incompatible(format!(
                "architecture expects {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    /// Uniform fan-in initialization; normalization scales start at 1 and
    /// shifts at 0.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R, opts: InitOptions) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let layout = p.layout.clone();
        let d = p.arch.emb_dim;

        let mut uniform = |values: &mut [f64], bound: f64| {
            for v in values {
                *v = rng.random_range(-bound..bound);
            }
        };

        let bound = 1.0 / (d as f64).sqrt();
        uniform(&mut p.values[layout.emb_weight..layout.emb_weight + d * d], bound);
        uniform(&mut p.values[layout.emb_bias..layout.emb_bias + d], bound);

        let mut convs: Vec<&ConvSlot> = vec![&layout.conv_in];
        let mut mods: Vec<&ModSlot> = vec![&layout.out_norm];
        for r in layout.enc.iter().chain([&layout.mid]).chain(&layout.dec) {
            convs.push(&r.conv);
            mods.push(&r.norm);
        }
        convs.extend(layout.down.iter().chain(&layout.up));
        if !opts.zero_output_head {
            convs.push(&layout.out_conv);
        }
        for c in convs {
            let bound = 1.0 / ((c.cin * 9) as f64).sqrt();
            uniform(&mut p.values[c.weight..c.weight + c.weight_len()], bound);
            uniform(&mut p.values[c.bias..c.bias + c.cout], bound);
        }
        for m in mods {
            uniform(&mut p.values[m.weight..m.weight + 2 * m.channels * d], 0.1 * bound);
            p.values[m.bias..m.bias + m.channels].fill(1.0);
        }
        Ok(p)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat view of every scalar parameter.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_view_covers_every_tensor() {
        for arch in [Architecture::tiny(), Architecture::default()] {
            let p = DenoiserParams::zeros(arch).unwrap();
            let sum: usize = p.tensors().iter().map(TensorInfo::len).sum();
            assert_eq!(sum, p.len());
            let mut next = 0;
            for t in p.tensors() {
                assert_eq!(t.offset, next);
                next += t.len();
            }
        }
    }

    #[test]
    fn parameter_budgets() {
        let tiny = DenoiserParams::zeros(Architecture::tiny()).unwrap();
        assert!(tiny.len() <= 5_000, "tiny has {}", tiny.len());
        let full = DenoiserParams::zeros(Architecture::default()).unwrap();
        // 16/32/64 widths land near 1e5 parameters.
        assert!(full.len() <= 120_000, "default has {}", full.len());
    }

    #[test]
    fn group_counts() {
        let a = Architecture::default();
        assert_eq!(a.groups_for(4), 2);
        assert_eq!(a.groups_for(8), 4);
        assert_eq!(a.groups_for(16), 8);
        assert_eq!(a.groups_for(64), 8);
        assert_eq!(a.groups_for(6), 3);
        assert_eq!(a.groups_for(2), 1);
    }

    #[test]
    fn init_is_deterministic_and_zero_head() {
        let a = DenoiserParams::init(Architecture::tiny(), &mut ChaCha8Rng::seed_from_u64(5), InitOptions::default()).unwrap();
        let b = DenoiserParams::init(Architecture::tiny(), &mut ChaCha8Rng::seed_from_u64(5), InitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.tensor("out_conv.weight").unwrap().iter().all(|&v| v == 0.0));
        assert!(a.tensor("out.mod.bias").unwrap()[..4].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_invalid_architecture() {
        let bad = Architecture {
            widths: vec![],
            ..Architecture::tiny()
        };
        assert!(DenoiserParams::zeros(bad).is_err());
        let bad = Architecture {
            emb_dim: 5,
            ..Architecture::tiny()
        };
        assert!(DenoiserParams::zeros(bad).is_err());
    }
}
