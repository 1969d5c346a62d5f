//! The five translation model variants.
//!
//! | kind           | generators              | discriminators | encoders |
//! |----------------|-------------------------|----------------|----------|
//! | `CycleGan`     | 2 × resnet24            | 2 × patch      | –        |
//! | `CycleGanS`    | 2 × resnet24            | 2 × patch      | –        |
//! | `Unit`         | 2 × shared-latent decoder | 2 × patch    | 2 (shared top block) |
//! | `GeneratorsS`  | 2 × resnet24            | –              | –        |
//! | `Simple`       | 2 × two-conv            | –              | –        |
//!
//! Domain A is T1 and domain B is T2; `g_ab` translates T1 → T2.

mod discriminator;
mod generator;
mod unit;

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::data::{Direction, Domain, Grid, NormalizedImage};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, PatchScores};
use crate::nn::ResBlock;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use discriminator::PatchDiscriminator;
pub use generator::{ResnetGenerator, SimpleGenerator};
pub use unit::{UnitDecoder, UnitEncoder};

/// Residual blocks in the 24-layer generator: 1 + 2 + 2·9 + 2 + 1 = 24.
pub const RESNET24_BLOCKS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "cyclegan")]
    CycleGan,
    #[serde(rename = "cyclegan_s")]
    CycleGanS,
    #[serde(rename = "unit")]
    Unit,
    #[serde(rename = "generators_s")]
    GeneratorsS,
    #[serde(rename = "simple")]
    Simple,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::CycleGan,
        ModelKind::CycleGanS,
        ModelKind::Unit,
        ModelKind::GeneratorsS,
        ModelKind::Simple,
    ];

    /// Identifier used on the command line and in files.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::CycleGan => "cyclegan",
            ModelKind::CycleGanS => "cyclegan_s",
            ModelKind::Unit => "unit",
            ModelKind::GeneratorsS => "generators_s",
            ModelKind::Simple => "simple",
        }
    }

    pub fn has_discriminators(self) -> bool {
        matches!(self, ModelKind::CycleGan | ModelKind::CycleGanS | ModelKind::Unit)
    }

    /// Kinds whose objective needs ground truth pairs.
    pub fn is_supervised(self) -> bool {
        matches!(self, ModelKind::CycleGanS | ModelKind::GeneratorsS | ModelKind::Simple)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!("unknown model kind {s:?}; valid kinds: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorArch {
    Resnet24,
    Simple2,
    UnitDecoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub arch: GeneratorArch,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub n_residual_blocks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub n_downsamplings: usize,
    pub base_width: usize,
}

/// Width and depth knobs. Defaults follow the usual full-size setup; the
/// layer counts of each architecture do not depend on them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub base_width: usize,
    pub simple_width: usize,
    pub disc_base_width: usize,
    pub disc_downsamplings: usize,
    pub unit_residual_blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_width: 64,
            simple_width: 64,
            disc_base_width: 64,
            disc_downsamplings: 4,
            unit_residual_blocks: 4,
        }
    }
}

impl ArchConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("base_width", self.base_width),
            ("simple_width", self.simple_width),
            ("disc_base_width", self.disc_base_width),
            ("disc_downsamplings", self.disc_downsamplings),
            ("unit_residual_blocks", self.unit_residual_blocks),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Resnet(ResnetGenerator),
    Simple(SimpleGenerator),
    UnitDecoder(UnitDecoder),
}

impl Generator {
    pub fn conv_layers(&self) -> usize {
        match self {
            Generator::Resnet(g) => g.conv_layers(),
            Generator::Simple(g) => g.conv_layers(),
            Generator::UnitDecoder(g) => g.conv_layers(),
        }
    }

    pub fn arch(&self) -> GeneratorArch {
        match self {
            Generator::Resnet(_) => GeneratorArch::Resnet24,
            Generator::Simple(_) => GeneratorArch::Simple2,
            Generator::UnitDecoder(_) => GeneratorArch::UnitDecoder,
        }
    }
}

/// Latent code of one image: the mean field and a reparameterized sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Latent<T> {
    pub mean: Tensor<T>,
    pub sample: Tensor<T>,
}

/// A model variant with all of its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    kind: ModelKind,
    image_shape: (usize, usize),
    seed: u64,
    arch: ArchConfig,
    loss_weights: LossWeights,
    params: ParamStore<T>,
    g_ab: Generator,
    g_ba: Generator,
    d_a: Option<PatchDiscriminator>,
    d_b: Option<PatchDiscriminator>,
    e_a: Option<UnitEncoder>,
    e_b: Option<UnitEncoder>,
    generator_params: Vec<ParamId>,
    discriminator_params: Vec<ParamId>,
}

/// Builds a model with default widths and loss weights.
pub fn build_model<T: Scalar>(kind: ModelKind, image_shape: (usize, usize), seed: u64) -> Result<ModelBundle<T>> {
    build_model_with(kind, image_shape, seed, &ArchConfig::default(), LossWeights::for_kind(kind))
}

pub fn build_model_with<T: Scalar>(
    kind: ModelKind,
    image_shape: (usize, usize),
    seed: u64,
    arch: &ArchConfig,
    loss_weights: LossWeights,
) -> Result<ModelBundle<T>> {
    arch.validate()?;
    loss_weights.validate_for(kind)?;
    let (h, w) = image_shape;
    let factor = match kind {
        ModelKind::Simple => 1,
        ModelKind::Unit => UnitEncoder::DOWNSAMPLING,
        _ => ResnetGenerator::DOWNSAMPLING,
    };
    if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} is not divisible by the {kind} downsampling factor {factor}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let bw = arch.base_width;
    let (g_ab, g_ba, e_a, e_b) = match kind {
        ModelKind::CycleGan | ModelKind::CycleGanS | ModelKind::GeneratorsS => (
            Generator::Resnet(ResnetGenerator::new(&mut store, &mut rng, "g_ab", 1, bw, RESNET24_BLOCKS)),
            Generator::Resnet(ResnetGenerator::new(&mut store, &mut rng, "g_ba", 1, bw, RESNET24_BLOCKS)),
            None,
            None,
        ),
        ModelKind::Simple => (
            Generator::Simple(SimpleGenerator::new(&mut store, &mut rng, "g_ab", 1, arch.simple_width)),
            Generator::Simple(SimpleGenerator::new(&mut store, &mut rng, "g_ba", 1, arch.simple_width)),
            None,
            None,
        ),
        ModelKind::Unit => {
            let n_private = arch.unit_residual_blocks - 1;
            let enc_shared = ResBlock::new(&mut store, &mut rng, "shared_enc", 4 * bw);
            let dec_shared = ResBlock::new(&mut store, &mut rng, "shared_dec", 4 * bw);
            let e_a = UnitEncoder::new(&mut store, &mut rng, "e_a", 1, bw, n_private, enc_shared.clone());
            let e_b = UnitEncoder::new(&mut store, &mut rng, "e_b", 1, bw, n_private, enc_shared);
            // g_ab decodes into domain B, g_ba into domain A
            let dec_b = UnitDecoder::new(&mut store, &mut rng, "g_ab", 1, bw, n_private, dec_shared.clone());
            let dec_a = UnitDecoder::new(&mut store, &mut rng, "g_ba", 1, bw, n_private, dec_shared);
            (
                Generator::UnitDecoder(dec_b),
                Generator::UnitDecoder(dec_a),
                Some(e_a),
                Some(e_b),
            )
        }
    };
    let (d_a, d_b) = if kind.has_discriminators() {
        let d_a = PatchDiscriminator::new(&mut store, &mut rng, "d_a", 1, arch.disc_base_width, arch.disc_downsamplings);
        let d_b = PatchDiscriminator::new(&mut store, &mut rng, "d_b", 1, arch.disc_base_width, arch.disc_downsamplings);
        if d_a.output_hw(h, w).is_none() {
            return Err(Error::Shape(format!(
                "{h}x{w} is too small for {} discriminator downsamplings",
                arch.disc_downsamplings
            )));
        }
        (Some(d_a), Some(d_b))
    } else {
        (None, None)
    };

    let (discriminator_params, generator_params) = store.iter().map(|(id, name, _)| (id, name)).fold(
        (Vec::new(), Vec::new()),
        |(mut d, mut g), (id, name)| {
            if name.starts_with("d_") {
                d.push(id);
            } else {
                g.push(id);
            }
            (d, g)
        },
    );

    Ok(ModelBundle {
        kind,
        image_shape,
        seed,
        arch: *arch,
        loss_weights,
        params: store,
        g_ab,
        g_ba,
        d_a,
        d_b,
        e_a,
        e_b,
        generator_params,
        discriminator_params,
    })
}

fn gaussian_like<T: Scalar>(shape: [usize; 4], rng: &mut dyn RngCore) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("noise shape")
}

impl<T: Scalar> ModelBundle<T> {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// `(height, width)` the model was built for.
    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn loss_weights(&self) -> &LossWeights {
        &self.loss_weights
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Generator and encoder parameters (each shared tensor listed once).
    pub fn generator_params(&self) -> &[ParamId] {
        &self.generator_params
    }

    pub fn discriminator_params(&self) -> &[ParamId] {
        &self.discriminator_params
    }

    pub fn generator(&self, direction: Direction) -> &Generator {
        match direction {
            Direction::T1ToT2 => &self.g_ab,
            Direction::T2ToT1 => &self.g_ba,
        }
    }

    pub fn generator_spec(&self, direction: Direction) -> GeneratorSpec {
        let g = self.generator(direction);
        GeneratorSpec {
            arch: g.arch(),
            in_channels: 1,
            out_channels: 1,
            base_width: match g {
                Generator::Simple(_) => self.arch.simple_width,
                _ => self.arch.base_width,
            },
            n_residual_blocks: match g {
                Generator::Resnet(_) => RESNET24_BLOCKS,
                Generator::Simple(_) => 0,
                Generator::UnitDecoder(_) => self.arch.unit_residual_blocks,
            },
        }
    }

    pub fn discriminator_spec(&self) -> Option<DiscriminatorSpec> {
        self.d_a.as_ref().map(|_| DiscriminatorSpec {
            n_downsamplings: self.arch.disc_downsamplings,
            base_width: self.arch.disc_base_width,
        })
    }

    pub fn discriminator(&self, domain: Domain) -> Result<&PatchDiscriminator> {
        let d = match domain {
            Domain::T1 => self.d_a.as_ref(),
            Domain::T2 => self.d_b.as_ref(),
        };
        d.ok_or_else(|| Error::UnsupportedOperation(format!("{} has no discriminators", self.kind)))
    }

    pub fn encoder(&self, domain: Domain) -> Result<&UnitEncoder> {
        let e = match domain {
            Domain::T1 => self.e_a.as_ref(),
            Domain::T2 => self.e_b.as_ref(),
        };
        e.ok_or_else(|| Error::UnsupportedOperation(format!("{} has no encoders", self.kind)))
    }

    /// Decoder producing images of `domain` (UNIT only).
    pub fn decoder(&self, domain: Domain) -> Result<&UnitDecoder> {
        let dir = match domain {
            Domain::T2 => Direction::T1ToT2,
            Domain::T1 => Direction::T2ToT1,
        };
        match self.generator(dir) {
            Generator::UnitDecoder(d) => Ok(d),
            _ => Err(Error::UnsupportedOperation(format!("{} has no decoders", self.kind))),
        }
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let (h, w) = self.image_shape;
        if shape[1] != 1 || shape[2] != h || shape[3] != w {
            return Err(Error::Shape(format!(
                "model built for 1x{h}x{w}, got {}x{}x{}",
                shape[1], shape[2], shape[3]
            )));
        }
        Ok(())
    }

    /// Encodes on a tape, returning `(mean, sample)`. Without `noise` the
    /// sample is the mean itself.
    pub fn encode_on(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        domain: Domain,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var)> {
        let mean = self.encoder(domain)?.forward(tape, x)?;
        let sample = match noise {
            Some(rng) => {
                let eps = tape.constant(gaussian_like(tape.value(mean).shape(), rng));
                tape.add(mean, eps)
            }
            None => mean,
        };
        Ok((mean, sample))
    }

    /// Translates a batch on a tape. `noise` only matters for UNIT.
    pub fn translate_on(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        direction: Direction,
        noise: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        match self.generator(direction) {
            Generator::Resnet(g) => g.forward(tape, x),
            Generator::Simple(g) => g.forward(tape, x),
            Generator::UnitDecoder(dec) => {
                let (_, z) = self.encode_on(tape, x, direction.source(), noise)?;
                dec.forward(tape, z)
            }
        }
    }

    pub fn discriminate_on(&self, tape: &mut Tape<'_, T>, x: Var, domain: Domain) -> Result<Var> {
        self.discriminator(domain)?.forward(tape, x)
    }

    /// Total convolution layers per component, e.g. `("g_ab", 24)`.
    pub fn conv_layer_counts(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![("g_ab", self.g_ab.conv_layers()), ("g_ba", self.g_ba.conv_layers())];
        if let (Some(a), Some(b)) = (&self.d_a, &self.d_b) {
            out.push(("d_a", a.conv_layers()));
            out.push(("d_b", b.conv_layers()));
        }
        if let (Some(a), Some(b)) = (&self.e_a, &self.e_b) {
            out.push(("e_a", a.conv_layers()));
            out.push(("e_b", b.conv_layers()));
        }
        out
    }
}

/// Inference-mode translation of one normalized image.
pub fn generate<T: Scalar>(
    bundle: &ModelBundle<T>,
    image: &NormalizedImage<T>,
    direction: Direction,
) -> Result<NormalizedImage<T>> {
    let mut tape = Tape::new(bundle.params());
    let x = tape.constant(image.to_tensor());
    let y = bundle.translate_on(&mut tape, x, direction, None)?;
    let out = Grid::from_tensor(tape.value(y))?;
    if !tape.value(y).all_finite() {
        return Err(Error::numerical("non-finite generator output"));
    }
    Ok(NormalizedImage::from_grid(out))
}

/// Patch realness scores of `image` under the discriminator of `domain`.
pub fn discriminate<T: Scalar>(
    bundle: &ModelBundle<T>,
    image: &NormalizedImage<T>,
    domain: Domain,
) -> Result<PatchScores<T>> {
    let d = bundle.discriminator(domain)?;
    let mut tape = Tape::new(bundle.params());
    let x = tape.constant(image.to_tensor());
    let y = d.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// Latent code of `image` under the encoder of `domain` (UNIT only).
pub fn encode<T: Scalar>(
    bundle: &ModelBundle<T>,
    image: &NormalizedImage<T>,
    domain: Domain,
    noise: Option<&mut dyn RngCore>,
) -> Result<Latent<T>> {
    bundle.encoder(domain)?;
    let mut tape = Tape::new(bundle.params());
    let x = tape.constant(image.to_tensor());
    bundle.check_input(tape.value(x).shape())?;
    let (mean, sample) = bundle.encode_on(&mut tape, x, domain, noise)?;
    Ok(Latent {
        mean: tape.value(mean).clone(),
        sample: tape.value(sample).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ArchConfig {
        ArchConfig {
            base_width: 2,
            simple_width: 4,
            disc_base_width: 2,
            disc_downsamplings: 2,
            unit_residual_blocks: 2,
        }
    }

    fn z_image(h: usize, w: usize, seed: u64) -> NormalizedImage<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        NormalizedImage::from_grid(Grid::new(w, h, px).unwrap())
    }

    fn build(kind: ModelKind, hw: usize) -> ModelBundle<f64> {
        build_model_with(kind, (hw, hw), 1, &small(), LossWeights::for_kind(kind)).unwrap()
    }

    #[test]
    fn conv_counts_per_kind() {
        let cg = build(ModelKind::CycleGan, 16);
        assert_eq!(cg.generator(Direction::T1ToT2).conv_layers(), 24);
        assert_eq!(cg.generator(Direction::T2ToT1).conv_layers(), 24);
        assert!(cg.discriminator(Domain::T1).is_ok());
        let s = build(ModelKind::Simple, 10);
        assert_eq!(s.generator(Direction::T1ToT2).conv_layers(), 2);
        assert!(s.discriminator(Domain::T2).is_err());
        assert_eq!(s.generator_spec(Direction::T1ToT2).arch, GeneratorArch::Simple2);
        let gs = build(ModelKind::GeneratorsS, 16);
        assert!(gs.discriminator_params().is_empty());
        let u = build(ModelKind::Unit, 16);
        assert!(u.encoder(Domain::T1).is_ok() && u.discriminator(Domain::T1).is_ok());
    }

    #[test]
    fn indivisible_shape_is_rejected() {
        let err = build_model::<f32>(ModelKind::CycleGan, (250, 250), 0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        // two-conv model has no downsampling
        assert!(build_model_with::<f32>(
            ModelKind::Simple,
            (7, 5),
            0,
            &small(),
            LossWeights::for_kind(ModelKind::Simple)
        )
        .is_ok());
    }

    #[test]
    fn generate_preserves_shape_and_is_deterministic() {
        for kind in ModelKind::ALL {
            let b = build(kind, 16);
            let x = z_image(16, 16, 2);
            for dir in Direction::BOTH {
                let y1 = generate(&b, &x, dir).unwrap();
                let y2 = generate(&b, &x, dir).unwrap();
                assert_eq!(y1.shape(), (16, 16));
                assert_eq!(y1, y2, "{kind} {dir}");
            }
        }
        let b = build(ModelKind::Simple, 16);
        assert!(matches!(generate(&b, &z_image(8, 16, 0), Direction::T1ToT2), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_grid_shape() {
        let b = build(ModelKind::CycleGan, 16);
        let s = discriminate(&b, &z_image(16, 16, 3), Domain::T1).unwrap();
        assert_eq!(s.shape(), [1, 1, 4, 4]);
        let gs = build(ModelKind::GeneratorsS, 16);
        assert!(matches!(
            discriminate(&gs, &z_image(16, 16, 3), Domain::T1),
            Err(Error::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn unit_encoders_share_top_block() {
        let b = build(ModelKind::Unit, 16);
        let ea = b.encoder(Domain::T1).unwrap();
        let eb = b.encoder(Domain::T2).unwrap();
        assert_eq!(ea.shared_params(), eb.shared_params());
        let da = b.decoder(Domain::T1).unwrap();
        let db = b.decoder(Domain::T2).unwrap();
        assert_eq!(da.shared_params(), db.shared_params());
        let lat = encode(&b, &z_image(16, 16, 4), Domain::T1, None).unwrap();
        assert_eq!(lat.mean, lat.sample);
        assert_eq!(lat.mean.shape()[2..], [4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy = encode(&b, &z_image(16, 16, 4), Domain::T1, Some(&mut rng)).unwrap();
        assert_eq!(noisy.mean, lat.mean);
        assert_ne!(noisy.sample, lat.mean);
        let cg = build(ModelKind::CycleGan, 16);
        assert!(matches!(
            encode(&cg, &z_image(16, 16, 4), Domain::T1, None),
            Err(Error::UnsupportedOperation(_))
        ));
    }

    #[test]
    fn kind_parsing_lists_valid_kinds() {
        assert_eq!("CycleGAN_s".parse::<ModelKind>().unwrap(), ModelKind::CycleGanS);
        let msg = "pix2pix".parse::<ModelKind>().unwrap_err().to_string();
        assert!(msg.contains("generators_s") && msg.contains("unit"));
    }
}
