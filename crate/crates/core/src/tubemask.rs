//! Token geometry and tube masking for masked video autoencoders.
//!
//! A clip of `T x H x W` frames is cut into `(temporal_patch, ph, pw)`
//! blocks, giving a `T' x H' x W'` token grid. Tube masking hides the same
//! spatial positions in every temporal slice.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchSpec {
    pub temporal_patch: usize,
    /// `(height, width)` of one spatial patch in pixels.
    pub spatial_patch: (usize, usize),
    pub embed_dim: usize,
}

impl PatchSpec {
    pub fn new(temporal_patch: usize, spatial_patch: (usize, usize), embed_dim: usize) -> Result<Self> {
        if temporal_patch == 0 || spatial_patch.0 == 0 || spatial_patch.1 == 0 || embed_dim == 0 {
            return Err(Error::arg("patch dimensions and embedding width must be >= 1"));
        }
        Ok(PatchSpec {
            temporal_patch,
            spatial_patch,
            embed_dim,
        })
    }
}

impl Default for PatchSpec {
    /// 2x16x16 tubelets embedded into 768 channels.
    fn default() -> Self {
        PatchSpec {
            temporal_patch: 2,
            spatial_patch: (16, 16),
            embed_dim: 768,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TokenGrid {
    pub t_tokens: usize,
    pub h_tokens: usize,
    pub w_tokens: usize,
}

impl TokenGrid {
    pub fn new(t_tokens: usize, h_tokens: usize, w_tokens: usize) -> Result<Self> {
        if t_tokens == 0 || h_tokens == 0 || w_tokens == 0 {
            return Err(Error::arg("token grid dimensions must be >= 1"));
        }
        Ok(TokenGrid {
            t_tokens,
            h_tokens,
            w_tokens,
        })
    }

    pub fn spatial(&self) -> usize {
        self.h_tokens * self.w_tokens
    }

    pub fn total(&self) -> usize {
        self.t_tokens * self.spatial()
    }
}

/// Token grid for a `(frames, height, width)` clip.
pub fn patch_grid(clip_dims: (usize, usize, usize), spec: &PatchSpec) -> Result<TokenGrid> {
    let (t, h, w) = clip_dims;
    let axes = [
        ("T", t, spec.temporal_patch),
        ("H", h, spec.spatial_patch.0),
        ("W", w, spec.spatial_patch.1),
    ];
    for (axis, len, patch) in axes {
        if len == 0 || len % patch != 0 {
            return Err(Error::arg(format!(
                "{axis} axis length {len} is not a positive multiple of patch size {patch}"
            )));
        }
    }
    TokenGrid::new(
        t / spec.temporal_patch,
        h / spec.spatial_patch.0,
        w / spec.spatial_patch.1,
    )
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::arg(format!("masking ratio {rho} is not in [0, 1)")));
    }
    Ok(())
}

/// `round(rho * spatial)` with halves rounded up.
pub fn masked_count(rho: f64, spatial: usize) -> usize {
    // the small offset keeps products like 0.95 * 10 from landing just below .5
    let v = (rho * spatial as f64 + 0.5 + 1e-9).floor() as usize;
    v.min(spatial)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TubeMask {
    grid: TokenGrid,
    rho: f64,
    /// One flag per spatial position, row-major; `true` = masked.
    spatial_pattern: Vec<bool>,
    seed: u64,
}

impl TubeMask {
    /// Mask with an explicit spatial pattern.
    pub fn from_pattern(grid: TokenGrid, spatial_pattern: Vec<bool>) -> Result<Self> {
        if spatial_pattern.len() != grid.spatial() {
            return Err(Error::arg(format!(
                "pattern has {} entries, grid has {} spatial positions",
                spatial_pattern.len(),
                grid.spatial()
            )));
        }
        let masked = spatial_pattern.iter().filter(|&&m| m).count();
        Ok(TubeMask {
            grid,
            rho: masked as f64 / grid.spatial() as f64,
            spatial_pattern,
            seed: 0,
        })
    }

    pub fn grid(&self) -> &TokenGrid {
        &self.grid
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spatial_pattern(&self) -> &[bool] {
        &self.spatial_pattern
    }

    /// Whether token `(t, s)` is hidden. Independent of `t`.
    pub fn is_masked(&self, _t: usize, s: usize) -> bool {
        self.spatial_pattern[s]
    }

    /// Same query by flat `t * H'W' + s` token index.
    pub fn is_masked_flat(&self, index: usize) -> bool {
        self.spatial_pattern[index % self.grid.spatial()]
    }

    pub fn masked_spatial(&self) -> usize {
        self.spatial_pattern.iter().filter(|&&m| m).count()
    }

    pub fn masked_tokens(&self) -> usize {
        self.grid.t_tokens * self.masked_spatial()
    }

    pub fn visible_tokens(&self) -> usize {
        self.grid.total() - self.masked_tokens()
    }

    /// Pattern as a row-major string of `0`/`1` characters.
    pub fn pattern_string(&self) -> String {
        self.spatial_pattern
            .iter()
            .map(|&m| if m { '1' } else { '0' })
            .collect()
    }

    pub fn summary(&self, spec: &PatchSpec) -> MaskSummary {
        MaskSummary {
            t_tokens: self.grid.t_tokens,
            h_tokens: self.grid.h_tokens,
            w_tokens: self.grid.w_tokens,
            total_tokens: self.grid.total(),
            temporal_patch: spec.temporal_patch,
            spatial_patch: [spec.spatial_patch.0, spec.spatial_patch.1],
            embed_dim: spec.embed_dim,
            rho: self.rho,
            seed: self.seed,
            masked_per_slice: self.masked_spatial(),
            masked_tokens: self.masked_tokens(),
            visible_tokens: self.visible_tokens(),
            spatial_pattern: self.pattern_string(),
        }
    }
}

/// Serializable description of a grid and its mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskSummary {
    pub t_tokens: usize,
    pub h_tokens: usize,
    pub w_tokens: usize,
    pub total_tokens: usize,
    pub temporal_patch: usize,
    pub spatial_patch: [usize; 2],
    pub embed_dim: usize,
    pub rho: f64,
    pub seed: u64,
    pub masked_per_slice: usize,
    pub masked_tokens: usize,
    pub visible_tokens: usize,
    pub spatial_pattern: String,
}

/// Draws `round(rho * H'W')` spatial positions uniformly without
/// replacement and masks them in every temporal slice.
pub fn gen_tube_mask(grid: TokenGrid, rho: f64, seed: u64) -> Result<TubeMask> {
    check_rho(rho)?;
    let n = grid.spatial();
    let k = masked_count(rho, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern = vec![false; n];
    for s in rand::seq::index::sample(&mut rng, n, k) {
        pattern[s] = true;
    }
    Ok(TubeMask {
        grid,
        rho,
        spatial_pattern: pattern,
        seed,
    })
}

/// Visible tokens and the flat grid index each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Visible<T> {
    pub tokens: Vec<T>,
    pub positions: Vec<usize>,
}

/// Keeps unmasked tokens in `t`-major, then spatial, order.
pub fn select_visible<T: Clone>(tokens: &[T], mask: &TubeMask) -> Result<Visible<T>> {
    if tokens.len() != mask.grid.total() {
        return Err(Error::arg(format!(
            "{} tokens supplied for a grid of {}",
            tokens.len(),
            mask.grid.total()
        )));
    }
    let (positions, tokens) = tokens
        .iter()
        .enumerate()
        .filter(|(k, _)| !mask.is_masked_flat(*k))
        .map(|(k, tok)| (k, tok.clone()))
        .unzip();
    Ok(Visible { tokens, positions })
}

/// Scatters visible tokens back to their grid positions, filling the rest
/// with `fill`.
pub fn reassemble<T: Clone>(visible: &Visible<T>, total: usize, fill: T) -> Result<Vec<T>> {
    let mut out = vec![fill; total];
    for (tok, &pos) in visible.tokens.iter().zip(&visible.positions) {
        let slot = out
            .get_mut(pos)
            .ok_or_else(|| Error::arg(format!("position {pos} outside grid of {total}")))?;
        *slot = tok.clone();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossPositions {
    #[default]
    MaskedOnly,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub loss: f64,
    /// No positions contributed (empty mask in masked-only mode); `loss` is 0.
    pub empty: bool,
}

/// Mean squared error between two token grids, each token holding `dim`
/// values stored contiguously in flat token order.
pub fn masked_mse(
    reconstruction: &[f64],
    target: &[f64],
    dim: usize,
    mask: &TubeMask,
    positions: LossPositions,
) -> Result<MaskedLoss> {
    let expected = mask.grid.total() * dim;
    if dim == 0 || reconstruction.len() != expected || target.len() != expected {
        return Err(Error::arg(format!(
            "value grids of {} and {} entries do not match {} tokens x {dim}",
            reconstruction.len(),
            target.len(),
            mask.grid.total()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (r, t)) in reconstruction.chunks(dim).zip(target.chunks(dim)).enumerate() {
        if positions == LossPositions::MaskedOnly && !mask.is_masked_flat(k) {
            continue;
        }
        sum += r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += dim;
    }
    Ok(if count == 0 {
        MaskedLoss { loss: 0.0, empty: true }
    } else {
        MaskedLoss {
            loss: sum / count as f64,
            empty: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let spec = PatchSpec::default();
        let g = patch_grid((16, 224, 224), &spec).unwrap();
        assert_eq!((g.t_tokens, g.h_tokens, g.w_tokens), (8, 14, 14));
        assert_eq!(g.total(), 1568);
        assert_eq!(patch_grid((2, 16, 16), &spec).unwrap().total(), 1);
        let err = patch_grid((16, 224, 225), &spec).unwrap_err().to_string();
        assert!(err.contains("W axis"), "{err}");
        assert!(patch_grid((3, 224, 224), &spec).unwrap_err().to_string().contains("T axis"));
        assert!(patch_grid((0, 16, 16), &spec).is_err());
    }

    #[test]
    fn mask_examples() {
        let g = TokenGrid::new(8, 14, 14).unwrap();
        let none = gen_tube_mask(g, 0.0, 1).unwrap();
        assert_eq!(none.masked_tokens(), 0);
        let m = gen_tube_mask(g, 0.9, 1).unwrap();
        assert_eq!(m.masked_spatial(), 176);
        assert_eq!(m.visible_tokens(), 160);
        assert_eq!(gen_tube_mask(g, 0.9, 1).unwrap(), m);
        assert_ne!(gen_tube_mask(g, 0.9, 2).unwrap().spatial_pattern(), m.spatial_pattern());
        assert!(gen_tube_mask(g, 1.0, 1).is_err());
        assert!(gen_tube_mask(g, -0.1, 1).is_err());
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(masked_count(0.5, 3), 2);
        assert_eq!(masked_count(0.95, 10), 10);
        assert_eq!(masked_count(0.75, 2), 2);
        assert_eq!(masked_count(0.9, 196), 176);
        assert_eq!(masked_count(0.95, 196), 186);
    }

    #[test]
    fn select_examples() {
        let g = TokenGrid::new(1, 2, 2).unwrap();
        let m = TubeMask::from_pattern(g, vec![true, false, false, true]).unwrap();
        let v = select_visible(&["a", "b", "c", "d"], &m).unwrap();
        assert_eq!(v.tokens, vec!["b", "c"]);
        assert_eq!(v.positions, vec![1, 2]);
        assert_eq!(reassemble(&v, 4, "").unwrap(), vec!["", "b", "c", ""]);

        let zero = gen_tube_mask(TokenGrid::new(2, 2, 2).unwrap(), 0.0, 0).unwrap();
        let toks: Vec<i32> = (0..8).collect();
        assert_eq!(select_visible(&toks, &zero).unwrap().tokens, toks);
        assert!(select_visible(&toks[..7], &zero).is_err());
    }

    #[test]
    fn mse_examples() {
        let g = TokenGrid::new(2, 2, 2).unwrap();
        let m = gen_tube_mask(g, 0.5, 3).unwrap();
        let dim = 3;
        let zeros = vec![0.0; g.total() * dim];
        let ones = vec![1.0; g.total() * dim];
        let l = masked_mse(&ones, &ones, dim, &m, LossPositions::MaskedOnly).unwrap();
        assert_eq!(l.loss, 0.0);
        let l = masked_mse(&ones, &zeros, dim, &m, LossPositions::MaskedOnly).unwrap();
        assert_eq!(l.loss, 1.0);
        assert!(!l.empty);

        let empty = gen_tube_mask(g, 0.0, 3).unwrap();
        let l = masked_mse(&ones, &zeros, dim, &empty, LossPositions::MaskedOnly).unwrap();
        assert!(l.empty && l.loss == 0.0);
        let l = masked_mse(&ones, &zeros, dim, &empty, LossPositions::All).unwrap();
        assert_eq!(l.loss, 1.0);
        assert!(masked_mse(&ones[1..], &zeros, dim, &m, LossPositions::All).is_err());
    }

    #[test]
    fn masked_only_ignores_visible_tokens() {
        let g = TokenGrid::new(1, 1, 2).unwrap();
        let m = TubeMask::from_pattern(g, vec![true, false]).unwrap();
        let recon = [1.0, 3.0, 100.0, 100.0];
        let target = [0.0, 0.0, 0.0, 0.0];
        // (1 + 9) / 2
        assert_eq!(masked_mse(&recon, &target, 2, &m, LossPositions::MaskedOnly).unwrap().loss, 5.0);
    }

    #[test]
    fn summary_json_fields() {
        let g = TokenGrid::new(1, 1, 4).unwrap();
        let m = TubeMask::from_pattern(g, vec![false, true, true, false]).unwrap();
        let s = m.summary(&PatchSpec::default());
        assert_eq!(s.spatial_pattern, "0110");
        assert_eq!(s.visible_tokens, 2);
    }
}
