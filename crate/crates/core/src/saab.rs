//! Saab and channel-wise Saab transforms.
//!
//! A [`SaabUnit`] projects a flattened neighborhood `x ∈ R^N` onto a fixed DC
//! anchor `(1/√N)·1` and a set of AC anchors learnt by PCA on the
//! DC-removed signal, then adds one shared bias so every training output is
//! positive. The channel-wise variant fits one unit per input channel and
//! keeps only children whose propagated energy clears a threshold.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{NeighborhoodSpec, RowMatrix, Shape, Volume4D};
use crate::volume::neighborhood::Gatherer;

/// Added on top of `-min(projection)` so training outputs are strictly positive.
pub const BIAS_EPSILON: f64 = 1e-6;

/// Default cap on neighborhood rows entering one covariance estimate.
pub const DEFAULT_MAX_COVARIANCE_ROWS: usize = 2_000_000;

/// Learned Saab transform for one input channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaabUnit {
    n_in: usize,
    /// `(M-1) × N`, row-major, rows orthonormal and orthogonal to the DC anchor.
    ac_anchors: Vec<f64>,
    bias: f64,
    /// `[DC, AC_1, …, AC_{M-1}]` as fractions of total input variance.
    energies: Vec<f64>,
}

impl SaabUnit {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// Total number of anchors `M` (DC included).
    pub fn n_components(&self) -> usize {
        1 + self.n_ac()
    }

    pub fn n_ac(&self) -> usize {
        self.ac_anchors.len() / self.n_in
    }

    pub fn dc_anchor(&self) -> Vec<f64> {
        vec![1.0 / (self.n_in as f64).sqrt(); self.n_in]
    }

    pub fn ac_anchor(&self, m: usize) -> &[f64] {
        &self.ac_anchors[m * self.n_in..(m + 1) * self.n_in]
    }

    pub fn ac_anchors(&self) -> &[f64] {
        &self.ac_anchors
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub(crate) fn from_raw(n_in: usize, ac_anchors: Vec<f64>, bias: f64, energies: Vec<f64>) -> Result<Self> {
        if n_in == 0 || ac_anchors.len() % n_in != 0 || energies.len() != 1 + ac_anchors.len() / n_in {
            return Err(Error::InvalidShape(format!(
                "inconsistent Saab unit: N={n_in}, {} anchor values, {} energies",
                ac_anchors.len(),
                energies.len()
            )));
        }
        Ok(SaabUnit {
            n_in,
            ac_anchors,
            bias,
            energies,
        })
    }

    /// Bias-free projection of `x` onto component `m` (0 = DC).
    #[inline]
    fn raw_projection(&self, m: usize, x: &[f32]) -> f64 {
        if m == 0 {
            let s: f64 = x.iter().map(|&v| v as f64).sum();
            s / (self.n_in as f64).sqrt()
        } else {
            dot(self.ac_anchor(m - 1), x)
        }
    }

    /// Output `y_m = a_mᵀx + b` for component `m`, rounded to `f32`.
    #[inline]
    pub fn project(&self, m: usize, x: &[f32]) -> f32 {
        (self.raw_projection(m, x) + self.bias) as f32
    }
}

#[inline]
fn dot(a: &[f64], x: &[f32]) -> f64 {
    a.iter().zip(x).map(|(&a, &x)| a * x as f64).sum()
}

/// First and second moments of a stream of rows, accumulated in `f64`.
#[derive(Clone, Debug)]
pub(crate) struct Moments {
    n: u64,
    sum: Vec<f64>,
    /// Upper triangle (including diagonal) of `Σ x xᵀ`, row-major packed.
    outer: Vec<f64>,
}

impl Moments {
    pub(crate) fn new(dim: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; dim],
            outer: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, row: &[f32]) {
        self.n += 1;
        let d = self.sum.len();
        let mut p = 0;
        for i in 0..d {
            let xi = row[i] as f64;
            self.sum[i] += xi;
            for &xj in &row[i..d] {
                self.outer[p] += xi * xj as f64;
                p += 1;
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += b;
        }
    }

    /// Sums partial moments in an order fixed by their contents, so the
    /// result does not depend on how the parts were enumerated.
    pub(crate) fn merge_canonical(dim: usize, mut parts: Vec<Moments>) -> Moments {
        let key = |m: &Moments| -> Vec<u64> {
            std::iter::once(m.n)
                .chain(m.sum.iter().chain(&m.outer).map(|v| v.to_bits()))
                .collect()
        };
        parts.sort_by_cached_key(key);
        let mut total = Moments::new(dim);
        for p in &parts {
            total.merge(p);
        }
        total
    }

    fn dim(&self) -> usize {
        self.sum.len()
    }

    /// Mean-removed covariance (population normalisation).
    fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut cov = DMatrix::zeros(d, d);
        let mut p = 0;
        for i in 0..d {
            for j in i..d {
                let v = self.outer[p] / n - mean[i] * mean[j];
                cov[(i, j)] = v;
                cov[(j, i)] = v;
                p += 1;
            }
        }
        cov
    }

    /// Mean squared row norm, the scale of cancellation error in `covariance`.
    fn second_moment_trace(&self) -> f64 {
        let d = self.dim();
        let n = self.n as f64;
        let mut p = 0;
        let mut t = 0.0;
        for i in 0..d {
            t += self.outer[p] / n;
            p += d - i;
        }
        t
    }
}

/// Learns anchors and energies from accumulated moments. The bias is left at
/// zero; callers set it from a projection pass.
fn anchors_from_moments(m: &Moments, max_components: usize) -> SaabUnit {
    let n = m.dim();
    let cov = m.covariance();
    let a0 = 1.0 / (n as f64).sqrt();
    // DC variance a0ᵀ Σ a0 and the DC-removed covariance P Σ P, P = I - a0 a0ᵀ
    let col_sums: Vec<f64> = (0..n).map(|j| cov.column(j).sum()).collect();
    let total_sum: f64 = col_sums.iter().sum();
    let dc_var = (total_sum / n as f64).max(0.0);
    let mut ac = cov.clone();
    for i in 0..n {
        for j in 0..n {
            ac[(i, j)] = cov[(i, j)] - (col_sums[i] + col_sums[j]) / n as f64 + total_sum / (n * n) as f64;
        }
    }
    // exact symmetry before the eigensolver
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (ac[(i, j)] + ac[(j, i)]);
            ac[(i, j)] = v;
            ac[(j, i)] = v;
        }
    }
    let ac_trace = ac.trace().max(0.0);
    let total = dc_var + ac_trace;
    let tol = (1e-13 * m.second_moment_trace()).max(1e-300);

    let eig = SymmetricEigen::new(ac);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = tol.max(1e-9 * lambda_max);
    let max_ac = max_components.saturating_sub(1);

    let mut anchors = Vec::new();
    let mut energies = Vec::new();
    if total > tol {
        energies.push(dc_var / total);
        for &idx in order.iter().take(max_ac) {
            let lambda = eig.eigenvalues[idx];
            if lambda <= rank_tol {
                break;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            // remove any DC leakage, renormalise, then fix the sign
            let proj: f64 = v.iter().sum::<f64>() * a0;
            for x in &mut v {
                *x -= proj * a0;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            let pivot = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (i, &x)| if x.abs() > best.1.abs() { (i, x) } else { best })
                .0;
            if v[pivot] < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
            anchors.extend_from_slice(&v);
            energies.push(lambda / total);
        }
    } else {
        // no variance at all: the whole signal is DC
        energies.push(1.0);
    }
    SaabUnit {
        n_in: n,
        ac_anchors: anchors,
        bias: 0.0,
        energies,
    }
}

fn bias_from_min(min_projection: f64) -> f64 {
    (-min_projection).max(0.0) + BIAS_EPSILON
}

/// Fits a Saab unit to `rows` (`n_samples × N`), keeping at most
/// `max_components` anchors (DC included).
pub fn saab_fit(rows: &RowMatrix, max_components: usize) -> Result<SaabUnit> {
    if rows.rows < 2 {
        return Err(Error::InsufficientData(format!(
            "Saab fitting needs at least 2 rows, got {}",
            rows.rows
        )));
    }
    if rows.cols == 0 || max_components == 0 {
        return Err(Error::InvalidShape("Saab fitting needs N >= 1 and at least one component".into()));
    }
    let mut m = Moments::new(rows.cols);
    for r in rows.iter_rows() {
        m.add(r);
    }
    let mut unit = anchors_from_moments(&m, max_components);
    let mut min = f64::INFINITY;
    for r in rows.iter_rows() {
        for comp in 0..unit.n_components() {
            min = min.min(unit.raw_projection(comp, r));
        }
    }
    unit.bias = bias_from_min(min);
    Ok(unit)
}

/// Applies a unit to every row: column 0 is the DC response, columns
/// `1..M` the AC responses, all including the bias.
pub fn saab_apply(unit: &SaabUnit, rows: &RowMatrix) -> Result<RowMatrix> {
    if rows.cols != unit.n_in {
        return Err(Error::InvalidShape(format!(
            "rows have length {}, unit expects {}",
            rows.cols, unit.n_in
        )));
    }
    let m = unit.n_components();
    let mut out = RowMatrix::zeros(rows.rows, m);
    for (i, r) in rows.iter_rows().enumerate() {
        for (comp, y) in out.row_mut(i).iter_mut().enumerate() {
            *y = unit.project(comp, r);
        }
    }
    Ok(out)
}

/// One node of the energy tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyNode {
    pub hop: usize,
    pub parent_channel: usize,
    pub component_index: usize,
    pub energy: f64,
    pub kept: bool,
}

/// One encoder hop: a Saab unit per input channel plus the energy tree that
/// decides which children become output channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelHopModel {
    pub hop: usize,
    pub spec: NeighborhoodSpec,
    pub energy_threshold: f64,
    pub parent_energies: Vec<f64>,
    pub units: Vec<SaabUnit>,
    /// Every child of every parent, kept or not, in (parent, component) order.
    pub nodes: Vec<EnergyNode>,
}

impl VoxelHopModel {
    pub fn in_channels(&self) -> usize {
        self.units.len()
    }

    /// `(parent, component)` of every output channel, in output order.
    pub fn kept(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter(|n| n.kept)
            .map(|n| (n.parent_channel, n.component_index))
            .collect()
    }

    pub fn out_channels(&self) -> usize {
        self.nodes.iter().filter(|n| n.kept).count()
    }

    /// Energies of the output channels; the parent energies of the next hop.
    pub fn kept_energies(&self) -> Vec<f64> {
        self.nodes.iter().filter(|n| n.kept).map(|n| n.energy).collect()
    }

    fn kept_by_parent(&self) -> Vec<Vec<usize>> {
        kept_by_parent(&self.nodes, self.units.len())
    }
}

/// Kept component indices per parent channel.
fn kept_by_parent(nodes: &[EnergyNode], parents: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); parents];
    for n in nodes.iter().filter(|n| n.kept) {
        out[n.parent_channel].push(n.component_index);
    }
    out
}

/// Output rows per parallel work item when streaming over a volume.
fn slab_rows(shape: Shape) -> usize {
    shape.w * shape.c
}

/// Applies every unit to its channel and writes the kept components.
/// Also reports the minimum raw projection over all components of each
/// unit when `track_min` is set.
fn project_volume(
    units: &[SaabUnit],
    kept: &[Vec<usize>],
    spec: &NeighborhoodSpec,
    vol: &Volume4D,
    track_min: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = Gatherer::new(vol, *spec)?;
    let [oh, ow, oc] = g.out_dims();
    let n_out: usize = kept.iter().map(Vec::len).sum();
    let n_win = spec.window_len();
    let per_slab = slab_rows(Shape::new(oh, ow, oc, 1)) * n_out;
    // raw (bias-free) outputs in f64, so callers can add a bias decided later
    let slabs: Vec<(Vec<f64>, Vec<f64>)> = (0..oh)
        .into_par_iter()
        .map(|h| {
            let mut buf = vec![0f32; n_win];
            let mut out = Vec::with_capacity(per_slab);
            let mut mins = vec![f64::INFINITY; units.len()];
            for w in 0..ow {
                for c in 0..oc {
                    for (p, unit) in units.iter().enumerate() {
                        g.fill_channel(h, w, c, p, &mut buf);
                        if track_min {
                            for comp in 0..unit.n_components() {
                                let y = unit.raw_projection(comp, &buf);
                                mins[p] = mins[p].min(y);
                            }
                        }
                        for &comp in &kept[p] {
                            out.push(unit.raw_projection(comp, &buf));
                        }
                    }
                }
            }
            (out, mins)
        })
        .collect();
    let mut raw = Vec::with_capacity(oh * per_slab);
    let mut mins = vec![f64::INFINITY; units.len()];
    for (out, m) in slabs {
        raw.extend_from_slice(&out);
        for (a, b) in mins.iter_mut().zip(m) {
            *a = a.min(b);
        }
    }
    Ok((raw, mins))
}

fn finish_features(
    raw: Vec<f64>,
    units: &[SaabUnit],
    kept: &[Vec<usize>],
    dims: [usize; 3],
    spacing: Option<[f64; 3]>,
) -> Volume4D {
    let biases: Vec<f64> = kept
        .iter()
        .enumerate()
        .flat_map(|(p, comps)| std::iter::repeat_n(units[p].bias, comps.len()))
        .collect();
    let k = biases.len();
    let data = raw
        .chunks_exact(k)
        .flat_map(|vox| vox.iter().zip(&biases).map(|(&y, &b)| (y + b) as f32))
        .collect();
    Volume4D::from_parts(Shape::from_spatial(dims, k), data, spacing)
}

/// Accumulates per-channel moments of one volume's neighborhoods, using
/// every `stride`-th voxel.
fn volume_moments(vol: &Volume4D, spec: &NeighborhoodSpec, stride: usize) -> Result<Vec<Moments>> {
    let g = Gatherer::new(vol, *spec)?;
    let [oh, ow, oc] = g.out_dims();
    let k = vol.shape().k;
    let n_win = spec.window_len();
    let per_h = ow * oc;
    let parts: Vec<Vec<Moments>> = (0..oh)
        .into_par_iter()
        .map(|h| {
            let mut buf = vec![0f32; n_win];
            let mut ms: Vec<Moments> = (0..k).map(|_| Moments::new(n_win)).collect();
            for w in 0..ow {
                for c in 0..oc {
                    let flat = (h * per_h) + w * oc + c;
                    if flat % stride != 0 {
                        continue;
                    }
                    for (p, m) in ms.iter_mut().enumerate() {
                        g.fill_channel(h, w, c, p, &mut buf);
                        m.add(&buf);
                    }
                }
            }
            ms
        })
        .collect();
    // fixed h order: deterministic for any thread count
    let mut total: Vec<Moments> = (0..k).map(|_| Moments::new(n_win)).collect();
    for part in &parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// Configuration of one channel-wise Saab fit.
#[derive(Clone, Copy, Debug)]
pub struct CwSaabConfig {
    pub spec: NeighborhoodSpec,
    pub energy_threshold: f64,
    pub max_covariance_rows: usize,
    pub hop: usize,
}

impl CwSaabConfig {
    pub fn new(spec: NeighborhoodSpec, energy_threshold: f64) -> Self {
        CwSaabConfig {
            spec,
            energy_threshold,
            max_covariance_rows: DEFAULT_MAX_COVARIANCE_ROWS,
            hop: 1,
        }
    }
}

/// Channel-wise Saab fit over a single feature map.
pub fn cw_saab_fit(
    fmap: &Volume4D,
    spec: &NeighborhoodSpec,
    energy_threshold: f64,
    parent_energies: &[f64],
) -> Result<VoxelHopModel> {
    let cfg = CwSaabConfig::new(*spec, energy_threshold);
    Ok(cw_saab_fit_many(std::slice::from_ref(fmap), &cfg, parent_energies)?.0)
}

/// Channel-wise Saab fit over several feature maps with identical channel
/// layout. Returns the model and the features of each training map, which
/// are bit-identical to what [`cw_saab_apply`] produces for the same input.
pub fn cw_saab_fit_many(
    fmaps: &[Volume4D],
    cfg: &CwSaabConfig,
    parent_energies: &[f64],
) -> Result<(VoxelHopModel, Vec<Volume4D>)> {
    cfg.spec.validate()?;
    let first = fmaps
        .first()
        .ok_or_else(|| Error::InsufficientData("no feature maps to fit".into()))?;
    let k = first.shape().k;
    if let Some(bad) = fmaps.iter().find(|f| f.shape().k != k) {
        return Err(Error::InvalidShape(format!(
            "channel count mismatch: {} vs {}",
            first.shape(),
            bad.shape()
        )));
    }
    if parent_energies.len() != k {
        return Err(Error::InvalidShape(format!(
            "{} parent energies for {k} channels",
            parent_energies.len()
        )));
    }
    let total_rows: usize = fmaps
        .iter()
        .map(|f| cfg.spec.output_dims(f.shape().spatial()).iter().product::<usize>())
        .sum();
    if total_rows < 2 {
        return Err(Error::InsufficientData(format!(
            "channel-wise Saab needs at least 2 neighborhoods, got {total_rows}"
        )));
    }
    let stride = total_rows.div_ceil(cfg.max_covariance_rows.max(1)).max(1);
    let n_win = cfg.spec.window_len();

    let per_volume: Vec<Vec<Moments>> = fmaps
        .iter()
        .map(|f| volume_moments(f, &cfg.spec, stride))
        .collect::<Result<_>>()?;
    let mut units: Vec<SaabUnit> = (0..k)
        .into_par_iter()
        .map(|p| {
            let parts: Vec<Moments> = per_volume.iter().map(|v| v[p].clone()).collect();
            let m = Moments::merge_canonical(n_win, parts);
            anchors_from_moments(&m, n_win)
        })
        .collect();

    let mut nodes = Vec::new();
    let mut any_pass = false;
    for (p, unit) in units.iter().enumerate() {
        for (comp, &e) in unit.energies.iter().enumerate() {
            let energy = parent_energies[p] * e;
            let pass = energy >= cfg.energy_threshold;
            any_pass |= pass;
            nodes.push(EnergyNode {
                hop: cfg.hop,
                parent_channel: p,
                component_index: comp,
                energy,
                kept: pass || comp == 0,
            });
        }
    }
    if !any_pass {
        return Err(Error::EmptyHop {
            threshold: cfg.energy_threshold,
        });
    }

    let kept = kept_by_parent(&nodes, k);

    let mut raws = Vec::with_capacity(fmaps.len());
    let mut mins = vec![f64::INFINITY; k];
    for f in fmaps {
        let (raw, m) = project_volume(&units, &kept, &cfg.spec, f, true)?;
        for (a, b) in mins.iter_mut().zip(m) {
            *a = a.min(b);
        }
        raws.push(raw);
    }
    for (unit, &m) in units.iter_mut().zip(&mins) {
        unit.bias = bias_from_min(m);
    }
    let model = VoxelHopModel {
        hop: cfg.hop,
        spec: cfg.spec,
        energy_threshold: cfg.energy_threshold,
        parent_energies: parent_energies.to_vec(),
        units,
        nodes,
    };
    let features = fmaps
        .iter()
        .zip(raws)
        .map(|(f, raw)| {
            let dims = cfg.spec.output_dims(f.shape().spatial());
            finish_features(raw, &model.units, &kept, dims, f.spacing())
        })
        .collect();
    Ok((model, features))
}

/// Applies a fitted hop. Output channels are the kept children in
/// (parent, component) order.
pub fn cw_saab_apply(model: &VoxelHopModel, fmap: &Volume4D) -> Result<Volume4D> {
    if fmap.shape().k != model.in_channels() {
        return Err(Error::InvalidShape(format!(
            "hop {} expects {} channels, got {}",
            model.hop,
            model.in_channels(),
            fmap.shape()
        )));
    }
    let kept = model.kept_by_parent();
    let (raw, _) = project_volume(&model.units, &kept, &model.spec, fmap, false)?;
    let dims = model.spec.output_dims(fmap.shape().spatial());
    Ok(finish_features(raw, &model.units, &kept, dims, fmap.spacing()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::gather_neighborhoods;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, d: usize, seed: u64) -> RowMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RowMatrix::new(n, d, (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_rows_have_no_ac() {
        let rows = RowMatrix::new(5, 4, vec![0.75; 20]).unwrap();
        let unit = saab_fit(&rows, 4).unwrap();
        assert_eq!(unit.n_ac(), 0);
        let out = saab_apply(&unit, &rows).unwrap();
        // DC projection of a constant c over N = 4 is 2c
        let dc = out.get(0, 0) as f64 - unit.bias();
        assert!((dc - 1.5).abs() < 1e-6);
        assert_eq!(unit.energies(), &[1.0]);
    }

    #[test]
    fn two_point_example() {
        // hand-computed: AC parts are ±(1/2, -1/2); the only AC direction is
        // (1, -1)/√2 with all of the AC variance.
        let rows = RowMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let unit = saab_fit(&rows, 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(unit.n_ac(), 1);
        let a = unit.ac_anchor(0);
        assert!((a[0] - s).abs() < 1e-12 && (a[1] + s).abs() < 1e-12);
        // DC variance is zero here, so the AC component holds all energy
        assert!((unit.energies()[1] - 1.0).abs() < 1e-12);
        assert!(unit.energies()[0].abs() < 1e-12);
    }

    #[test]
    fn anchor_rows_are_orthonormal() {
        let rows = random_rows(400, 27, 5);
        let unit = saab_fit(&rows, 27).unwrap();
        assert_eq!(unit.n_components(), 27);
        let dc = unit.dc_anchor();
        for i in 0..unit.n_ac() {
            let ai = unit.ac_anchor(i);
            let d0: f64 = ai.iter().zip(&dc).map(|(a, b)| a * b).sum();
            assert!(d0.abs() < 1e-8);
            for j in 0..unit.n_ac() {
                let d: f64 = ai.iter().zip(unit.ac_anchor(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-8, "({i},{j}) {d}");
            }
        }
        let e = unit.energies();
        assert!(e[1..].windows(2).all(|w| w[0] >= w[1]));
        assert!(e.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn apply_projects_basis_vectors() {
        let rows = random_rows(300, 9, 11);
        let unit = saab_fit(&rows, 9).unwrap();
        let a1: Vec<f32> = unit.ac_anchor(0).iter().map(|&x| x as f32).collect();
        let out = saab_apply(&unit, &RowMatrix::new(1, 9, a1).unwrap()).unwrap();
        let b = unit.bias();
        assert!((out.get(0, 1) as f64 - (1.0 + b)).abs() < 1e-6);
        for m in 2..unit.n_components() {
            assert!((out.get(0, m) as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn apply_matches_naive_products_and_is_nonnegative() {
        let rows = random_rows(500, 27, 7);
        let unit = saab_fit(&rows, 10).unwrap();
        assert_eq!(unit.n_components(), 10);
        let out = saab_apply(&unit, &rows).unwrap();
        let dc = unit.dc_anchor();
        for i in 0..rows.rows {
            let x = rows.row(i);
            let mut want = vec![dc.iter().zip(x).map(|(a, &b)| a * b as f64).sum::<f64>() + unit.bias()];
            for m in 0..unit.n_ac() {
                let mut s = unit.bias();
                for j in 0..27 {
                    s += unit.ac_anchor(m)[j] * x[j] as f64;
                }
                want.push(s);
            }
            for (m, w) in want.iter().enumerate() {
                assert!((out.get(i, m) as f64 - w).abs() < 1e-6);
                assert!(out.get(i, m) >= -1e-9);
            }
        }
    }

    #[test]
    fn fit_errors() {
        let one = RowMatrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(saab_fit(&one, 3), Err(Error::InsufficientData(_))));
        let rows = random_rows(10, 3, 1);
        let unit = saab_fit(&rows, 3).unwrap();
        let wrong = random_rows(2, 4, 1);
        assert!(matches!(saab_apply(&unit, &wrong), Err(Error::InvalidShape(_))));
    }

    fn random_volume(shape: Shape, seed: u64) -> Volume4D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume4D::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn cw_threshold_zero_keeps_full_rank() {
        let v = random_volume(Shape::new(8, 8, 8, 1), 1);
        let m = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 0.0, &[1.0]).unwrap();
        assert_eq!(m.out_channels(), 27);
    }

    #[test]
    fn cw_threshold_one_is_empty() {
        let v = random_volume(Shape::new(6, 6, 6, 1), 2);
        let err = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 1.0, &[1.0]).unwrap_err();
        assert!(matches!(err, Error::EmptyHop { .. }));
    }

    #[test]
    fn cw_rank_three_volume() {
        // f(h, w, c) = p(h) + 0.5·(-1)^c: every 3×3×3 window is a mix of the
        // three dh-indicator patterns and one alternating dc pattern; minus
        // the DC direction that leaves an AC rank of exactly 3.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Vec<f32> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let v = Volume4D::from_fn(Shape::new(12, 6, 6, 1), |h, _, c, _| {
            p[h] + if c % 2 == 0 { 0.5 } else { -0.5 }
        })
        .unwrap();
        let m = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 1e-6, &[1.0]).unwrap();
        let ac_kept = m.kept().iter().filter(|(_, comp)| *comp > 0).count();
        assert_eq!(ac_kept, 3);
        assert_eq!(m.units[0].n_ac(), 3);
    }

    #[test]
    fn cw_apply_matches_fit_features_and_composition() {
        let v = random_volume(Shape::new(6, 5, 4, 2), 8);
        let spec = NeighborhoodSpec::cube3();
        let cfg = CwSaabConfig::new(spec, 0.01);
        let (model, feats) = cw_saab_fit_many(std::slice::from_ref(&v), &cfg, &[0.6, 0.4]).unwrap();
        let applied = cw_saab_apply(&model, &v).unwrap();
        assert_eq!(applied, feats[0]);
        // compositional oracle: per-channel gather then saab_apply
        let kept = model.kept();
        for (p, unit) in model.units.iter().enumerate() {
            let rows = gather_neighborhoods(&v.channel(p).unwrap(), &spec).unwrap();
            let out = saab_apply(unit, &rows).unwrap();
            for (ch, &(pp, comp)) in kept.iter().enumerate() {
                if pp != p {
                    continue;
                }
                for r in 0..rows.rows {
                    let got = applied.data()[r * kept.len() + ch];
                    assert!((got - out.get(r, comp)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn cw_constant_volume_gives_bias_only_ac() {
        let v = Volume4D::filled(Shape::new(4, 4, 4, 1), 0.5).unwrap();
        let m = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 0.0, &[1.0]).unwrap();
        assert_eq!(m.out_channels(), 1);
        let out = cw_saab_apply(&m, &v).unwrap();
        assert!(out.data().iter().all(|&x| x == out.data()[0]));
    }

    #[test]
    fn cw_apply_rejects_channel_mismatch() {
        let v = random_volume(Shape::new(4, 4, 4, 1), 3);
        let m = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 0.0, &[1.0]).unwrap();
        let two = random_volume(Shape::new(4, 4, 4, 2), 3);
        assert!(matches!(cw_saab_apply(&m, &two), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn energy_tree_multiplies_parent() {
        let v = random_volume(Shape::new(6, 6, 6, 2), 12);
        let parents = [0.7, 0.05];
        let m = cw_saab_fit(&v, &NeighborhoodSpec::cube3(), 0.001, &parents).unwrap();
        for n in &m.nodes {
            let local = m.units[n.parent_channel].energies()[n.component_index];
            assert!((n.energy - parents[n.parent_channel] * local).abs() < 1e-10);
            assert_eq!(n.kept, n.energy >= 0.001 || n.component_index == 0);
        }
    }
}
