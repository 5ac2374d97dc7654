//! Coarse-to-fine decoding: per-hop feature aggregation, confidence-filtered
//! supervision, boosted-tree classification with soft-label smoothing, and
//! cumulative upsampling of predicted probabilities.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ensemble_fit, predict_proba, BoostParams, TreeEnsemble};
use crate::encoder::HopFeatures;
use crate::error::{Error, Result};
use crate::metrics::mean_foreground_dsc;
use crate::volume::{
    gather_neighborhoods, median_filter_2d, resize_trilinear_centered, LabelVolume, NeighborhoodSpec,
    Padding, RowMatrix, Shape, Volume4D,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub n_classes: usize,
    /// Minimum interpolated class value for a voxel to become a training sample.
    pub confidence_threshold: f64,
    /// Soft-label-smoothing iterations per hop.
    pub refinements: usize,
    pub sls_window: [usize; 3],
    pub main: BoostParams,
    /// Boosting rounds of every refinement ensemble; other settings follow `main`.
    pub refine_rounds: usize,
    /// Per-hop cap on training voxels after class balancing.
    pub max_samples: usize,
    /// Each class keeps at most this multiple of the rarest class.
    pub class_balance_ratio: f64,
    pub median_window: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            n_classes: 2,
            confidence_threshold: 0.9,
            refinements: 2,
            sls_window: [3, 3, 3],
            main: BoostParams::default(),
            refine_rounds: 100,
            max_samples: 500_000,
            class_balance_ratio: 3.0,
            median_window: 7,
        }
    }
}

impl DecoderConfig {
    fn validate(&self) -> Result<()> {
        if !(2..=255).contains(&self.n_classes) {
            return Err(Error::Config(format!(
                "class count must lie in 2..=255, got {}",
                self.n_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if self.max_samples < 2 || self.class_balance_ratio < 1.0 {
            return Err(Error::Config("sample budget too small".into()));
        }
        self.sls_spec()?;
        Ok(())
    }

    fn sls_spec(&self) -> Result<NeighborhoodSpec> {
        NeighborhoodSpec::new(self.sls_window, [1, 1, 1], Padding::Reflect)
    }

    fn stage_params(&self, hop: usize, stage: usize) -> BoostParams {
        let mut p = self.main.clone();
        if stage > 0 {
            p.n_rounds = self.refine_rounds;
        }
        p.seed = self
            .main
            .seed
            .wrapping_add((hop as u64) << 32)
            .wrapping_add(stage as u64);
        p
    }
}

/// Classifiers of one decoder hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopDecoder {
    pub hop: usize,
    pub main: TreeEnsemble,
    pub refine: Vec<TreeEnsemble>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderModel {
    pub config: DecoderConfig,
    /// Hops ordered coarse to fine (`L … 1`).
    pub hops: Vec<HopDecoder>,
}

impl DecoderModel {
    pub fn n_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn ensembles(&self) -> impl Iterator<Item = &TreeEnsemble> {
        self.hops.iter().flat_map(|h| std::iter::once(&h.main).chain(&h.refine))
    }
}

/// Normalised voxel coordinates `(x, y, z) = (w/(W-1), h/(H-1), c/(C-1))`;
/// a singleton axis reads 0.5.
pub fn position_encoding(dims: [usize; 3]) -> Result<Volume4D> {
    let [h, w, c] = dims;
    let norm = |i: usize, n: usize| if n == 1 { 0.5 } else { i as f32 / (n - 1) as f32 };
    Volume4D::from_fn(Shape::new(h, w, c, 3), |hh, ww, cc, k| match k {
        0 => norm(ww, w),
        1 => norm(hh, h),
        _ => norm(cc, c),
    })
}

/// One-hot encoding of a label volume with `n_classes` channels.
pub fn one_hot(labels: &LabelVolume, n_classes: usize) -> Result<Volume4D> {
    if labels.max_label() as usize >= n_classes {
        return Err(Error::InvalidShape(format!(
            "label {} outside 0..{n_classes}",
            labels.max_label()
        )));
    }
    let mut data = vec![0f32; labels.data().len() * n_classes];
    for (i, &l) in labels.data().iter().enumerate() {
        data[i * n_classes + l as usize] = 1.0;
    }
    Volume4D::new(Shape::from_spatial(labels.dims(), n_classes), data)
}

/// Lowest index of the largest value.
#[inline]
fn argmax(v: &[f32]) -> (usize, f32) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}

/// Hard labels from a soft map; ties resolve to the lowest class.
pub fn argmax_labels(soft: &Volume4D) -> LabelVolume {
    let k = soft.shape().k;
    let data = soft.data().chunks_exact(k).map(|v| argmax(v).0 as u8).collect();
    LabelVolume::from_parts(soft.shape().spatial(), data)
}

/// Downsampled supervision at one hop.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervision {
    /// Interpolated per-class soft labels.
    pub soft: Volume4D,
    pub labels: LabelVolume,
    pub selected: Vec<bool>,
}

impl Supervision {
    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

fn supervise(mask: &LabelVolume, dims: [usize; 3], n_classes: usize, threshold: f64) -> Result<Supervision> {
    let soft = resize_trilinear_centered(&one_hot(mask, n_classes)?, dims)?;
    let (labels, selected): (Vec<u8>, Vec<bool>) = soft
        .data()
        .chunks_exact(n_classes)
        .map(|v| {
            let (l, conf) = argmax(v);
            // tolerate f32 rounding of interpolated one-hot sums
            (l as u8, conf as f64 + 1e-6 >= threshold)
        })
        .unzip();
    Ok(Supervision {
        soft,
        labels: LabelVolume::from_parts(dims, labels),
        selected,
    })
}

/// Trilinearly downsamples a ground-truth mask to `dims` and selects voxels
/// whose strongest class value reaches `threshold`.
pub fn downsample_labels(
    mask: &LabelVolume,
    dims: [usize; 3],
    n_classes: usize,
    threshold: f64,
) -> Result<Supervision> {
    let s = supervise(mask, dims, n_classes, threshold)?;
    if s.n_selected() == 0 {
        return Err(Error::EmptySupervision { threshold });
    }
    Ok(s)
}

/// Next-finer `F_p`: the previous `F_p` and this hop's soft decisions,
/// concatenated and upsampled together to `dims`.
pub fn propagate(prev_fp: Option<&Volume4D>, soft: &Volume4D, dims: [usize; 3]) -> Result<Volume4D> {
    let joined = match prev_fp {
        Some(fp) => Volume4D::concat_channels(&[fp, soft])?,
        None => soft.clone(),
    };
    resize_trilinear_centered(&joined, dims)
}

/// Per-voxel `(F_s, F_p, F_e)` at one hop.
pub fn aggregate_features(fe: &Volume4D, fp: Option<&Volume4D>) -> Result<Volume4D> {
    let dims = fe.shape().spatial();
    let fs = position_encoding(dims)?;
    match fp {
        Some(fp) => {
            if fp.shape().spatial() != dims {
                return Err(Error::InvalidShape(format!(
                    "F_p is {} but encoder features are {}",
                    fp.shape(),
                    fe.shape()
                )));
            }
            Volume4D::concat_channels(&[&fs, fp, fe])
        }
        None => Volume4D::concat_channels(&[&fs, fe]),
    }
}

fn as_rows(v: &Volume4D) -> RowMatrix {
    let s = v.shape();
    RowMatrix {
        rows: s.voxels(),
        cols: s.k,
        data: v.data().to_vec(),
    }
}

fn soft_from_rows(rows: RowMatrix, dims: [usize; 3]) -> Volume4D {
    Volume4D::from_parts(Shape::from_spatial(dims, rows.cols), rows.data, None)
}

fn classify(e: &TreeEnsemble, rows: &RowMatrix, dims: [usize; 3]) -> Result<Volume4D> {
    Ok(soft_from_rows(predict_proba(e, rows)?, dims))
}

fn sls_features(soft: &Volume4D, spec: &NeighborhoodSpec) -> Result<RowMatrix> {
    gather_neighborhoods(soft, spec)
}

/// Soft-label smoothing: each ensemble re-classifies every voxel from the
/// neighbourhood of current soft decisions.
pub fn sls_refine(soft: &Volume4D, ensembles: &[TreeEnsemble], window: [usize; 3]) -> Result<Volume4D> {
    let spec = NeighborhoodSpec::new(window, [1, 1, 1], Padding::Reflect)?;
    let dims = soft.shape().spatial();
    let mut cur = soft.clone();
    for e in ensembles {
        cur = classify(e, &sls_features(&cur, &spec)?, dims)?;
    }
    Ok(cur)
}

/// Soft decisions of one hop: after the main classifier and after each
/// refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct HopTrace {
    pub hop: usize,
    pub main: Volume4D,
    pub refined: Vec<Volume4D>,
}

impl HopTrace {
    /// The hop output that propagates to the next finer hop.
    pub fn output(&self) -> &Volume4D {
        self.refined.last().unwrap_or(&self.main)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput {
    /// Full-resolution soft decisions.
    pub soft: Volume4D,
    /// Argmax labels after the median filter.
    pub labels: LabelVolume,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrace {
    /// Coarse to fine.
    pub hops: Vec<HopTrace>,
    /// Argmax labels before the median filter.
    pub unfiltered: LabelVolume,
    pub output: DecoderOutput,
}

fn finalize(config: &DecoderConfig, soft: Volume4D) -> Result<(LabelVolume, DecoderOutput)> {
    let unfiltered = argmax_labels(&soft);
    let labels = median_filter_2d(&unfiltered, config.median_window)?;
    Ok((unfiltered, DecoderOutput { soft, labels }))
}

fn check_features(features: &HopFeatures, n_hops: usize) -> Result<()> {
    if features.len() != n_hops {
        return Err(Error::InvalidShape(format!(
            "expected features from {n_hops} hops, got {}",
            features.len()
        )));
    }
    Ok(())
}

/// Runs the fitted decoder, keeping every intermediate soft map.
pub fn decoder_predict_traced(model: &DecoderModel, features: &HopFeatures) -> Result<DecoderTrace> {
    let l = model.n_hops();
    check_features(features, l)?;
    let spec = model.config.sls_spec()?;
    let mut fp: Option<Volume4D> = None;
    let mut traces: Vec<HopTrace> = Vec::with_capacity(l);
    for hd in &model.hops {
        let i = hd.hop;
        let run = || -> Result<HopTrace> {
            let fe = &features[i - 1];
            let dims = fe.shape().spatial();
            let rows = as_rows(&aggregate_features(fe, fp.as_ref())?);
            let main = classify(&hd.main, &rows, dims)?;
            let mut refined = Vec::with_capacity(hd.refine.len());
            for e in &hd.refine {
                let cur = refined.last().unwrap_or(&main);
                refined.push(classify(e, &sls_features(cur, &spec)?, dims)?);
            }
            Ok(HopTrace { hop: i, main, refined })
        };
        let trace = run().map_err(|e| e.at_hop(i))?;
        if i > 1 {
            let finer = features[i - 2].shape().spatial();
            fp = Some(propagate(fp.as_ref(), trace.output(), finer).map_err(|e| e.at_hop(i))?);
        }
        traces.push(trace);
    }
    let soft = traces.last().expect("at least one hop").output().clone();
    let (unfiltered, output) = finalize(&model.config, soft)?;
    Ok(DecoderTrace {
        hops: traces,
        unfiltered,
        output,
    })
}

/// Full-resolution soft decisions and filtered labels for one volume.
pub fn decoder_predict(model: &DecoderModel, features: &HopFeatures) -> Result<DecoderOutput> {
    Ok(decoder_predict_traced(model, features)?.output)
}

/// Training statistics of one hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopFitReport {
    pub hop: usize,
    pub dims: [usize; 3],
    pub feature_dim: usize,
    pub n_selected: usize,
    pub n_train: usize,
    /// Mean foreground DSC against the downsampled labels, main classifier.
    pub dsc_main: f64,
    /// Same after each refinement.
    pub dsc_refined: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecoderFit {
    pub model: DecoderModel,
    pub report: Vec<HopFitReport>,
    /// Final outputs on every training volume, identical to
    /// [`decoder_predict`] on the same features.
    pub outputs: Vec<DecoderOutput>,
}

/// Class-balanced, budgeted choice of training voxels. Returns per-volume
/// sorted voxel indices.
fn choose_samples(sup: &[Supervision], config: &DecoderConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let k = config.n_classes;
    let mut by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for (v, s) in sup.iter().enumerate() {
        for (i, (&sel, &l)) in s.selected.iter().zip(s.labels.data()).enumerate() {
            if sel {
                by_class[l as usize].push((v, i));
            }
        }
    }
    let rarest = by_class.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    let cap = (config.class_balance_ratio * rarest as f64).ceil() as usize;
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for list in &by_class {
        if list.len() > cap && by_class.iter().filter(|l| !l.is_empty()).count() > 1 {
            let mut pick = index::sample(rng, list.len(), cap).into_vec();
            pick.sort_unstable();
            chosen.extend(pick.into_iter().map(|j| list[j]));
        } else {
            chosen.extend_from_slice(list);
        }
    }
    chosen.sort_unstable();
    if chosen.len() > config.max_samples {
        let mut pick = index::sample(rng, chosen.len(), config.max_samples).into_vec();
        pick.sort_unstable();
        chosen = pick.into_iter().map(|j| chosen[j]).collect();
    }
    let mut per_volume = vec![Vec::new(); sup.len()];
    for (v, i) in chosen {
        per_volume[v].push(i);
    }
    per_volume
}

fn gather_rows(rows: &RowMatrix, idx: &[usize], out: &mut Vec<f32>) {
    for &i in idx {
        out.extend_from_slice(rows.row(i));
    }
}

fn mean_dsc(preds: &[Volume4D], sup: &[Supervision], n_classes: usize) -> Result<f64> {
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(sup) {
        total += mean_foreground_dsc(&argmax_labels(p), &s.labels, n_classes)?;
    }
    Ok(total / preds.len() as f64)
}

/// Fits one hop's classifiers; returns the model, its report and the soft
/// traces of every training volume.
fn fit_hop(
    hop: usize,
    features: &[HopFeatures],
    fps: &[Option<Volume4D>],
    masks: &[LabelVolume],
    config: &DecoderConfig,
) -> Result<(HopDecoder, HopFitReport, Vec<HopTrace>)> {
    let k = config.n_classes;
    let spec = config.sls_spec()?;
    let dims = features[0][hop - 1].shape().spatial();
    let sup: Vec<Supervision> = features
        .iter()
        .zip(masks)
        .map(|(f, m)| supervise(m, f[hop - 1].shape().spatial(), k, config.confidence_threshold))
        .collect::<Result<_>>()?;
    let n_selected: usize = sup.iter().map(Supervision::n_selected).sum();
    if n_selected == 0 {
        return Err(Error::EmptySupervision {
            threshold: config.confidence_threshold,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.stage_params(hop, 0).seed ^ 0x5EED);
    let chosen = choose_samples(&sup, config, &mut rng);
    let labels: Vec<u8> = chosen
        .iter()
        .zip(&sup)
        .flat_map(|(idx, s)| idx.iter().map(|&i| s.labels.data()[i]))
        .collect();
    let n_train = labels.len();

    // main classifier
    let mut x = Vec::new();
    let mut feature_dim = 0;
    for ((f, fp), idx) in features.iter().zip(fps).zip(&chosen) {
        let rows = as_rows(&aggregate_features(&f[hop - 1], fp.as_ref())?);
        feature_dim = rows.cols;
        gather_rows(&rows, idx, &mut x);
    }
    let x = RowMatrix::new(n_train, feature_dim, x)?;
    let main = ensemble_fit(&x, &labels, k, &config.stage_params(hop, 0))?;
    drop(x);
    let mut current: Vec<Volume4D> = features
        .iter()
        .zip(fps)
        .map(|(f, fp)| {
            let fe = &f[hop - 1];
            classify(&main, &as_rows(&aggregate_features(fe, fp.as_ref())?), fe.shape().spatial())
        })
        .collect::<Result<_>>()?;
    let mut traces: Vec<HopTrace> = current
        .iter()
        .map(|m| HopTrace {
            hop,
            main: m.clone(),
            refined: Vec::new(),
        })
        .collect();
    let dsc_main = mean_dsc(&current, &sup, k)?;

    // soft-label smoothing
    let mut refine = Vec::with_capacity(config.refinements);
    let mut dsc_refined = Vec::with_capacity(config.refinements);
    for r in 0..config.refinements {
        let mut x = Vec::with_capacity(n_train * spec.window_len() * k);
        for (soft, idx) in current.iter().zip(&chosen) {
            gather_rows(&sls_features(soft, &spec)?, idx, &mut x);
        }
        let x = RowMatrix::new(n_train, spec.window_len() * k, x)?;
        let e = ensemble_fit(&x, &labels, k, &config.stage_params(hop, r + 1))?;
        drop(x);
        current = current
            .iter()
            .map(|soft| classify(&e, &sls_features(soft, &spec)?, soft.shape().spatial()))
            .collect::<Result<_>>()?;
        for (t, c) in traces.iter_mut().zip(&current) {
            t.refined.push(c.clone());
        }
        dsc_refined.push(mean_dsc(&current, &sup, k)?);
        refine.push(e);
    }
    log::info!(
        "hop {hop}: {n_train} training voxels of {n_selected} selected, dsc main {dsc_main:.4} refined {dsc_refined:?}"
    );
    Ok((
        HopDecoder { hop, main, refine },
        HopFitReport {
            hop,
            dims,
            feature_dim,
            n_selected,
            n_train,
            dsc_main,
            dsc_refined,
        },
        traces,
    ))
}

/// Fits the decoder from per-volume encoder features and full-resolution
/// masks (same grid as hop 1).
pub fn decoder_fit(features: &[HopFeatures], masks: &[LabelVolume], config: &DecoderConfig) -> Result<DecoderFit> {
    config.validate()?;
    if features.is_empty() || features.len() != masks.len() {
        return Err(Error::InsufficientData(format!(
            "{} feature sets for {} masks",
            features.len(),
            masks.len()
        )));
    }
    let l = features[0].len();
    if l == 0 {
        return Err(Error::InvalidShape("no encoder hops".into()));
    }
    for (f, m) in features.iter().zip(masks) {
        check_features(f, l)?;
        if f[0].shape().spatial() != m.dims() {
            return Err(Error::InvalidShape(format!(
                "mask {:?} does not match hop-1 grid {}",
                m.dims(),
                f[0].shape()
            )));
        }
    }

    let mut fps: Vec<Option<Volume4D>> = vec![None; features.len()];
    let mut hops = Vec::with_capacity(l);
    let mut report = Vec::with_capacity(l);
    let mut last: Vec<HopTrace> = Vec::new();
    for hop in (1..=l).rev() {
        let (hd, rep, hop_traces) =
            fit_hop(hop, features, &fps, masks, config).map_err(|e| e.at_hop(hop))?;
        if hop > 1 {
            fps = features
                .iter()
                .zip(&fps)
                .zip(&hop_traces)
                .map(|((f, fp), t)| propagate(fp.as_ref(), t.output(), f[hop - 2].shape().spatial()).map(Some))
                .collect::<Result<_>>()
                .map_err(|e| e.at_hop(hop))?;
        }
        last = hop_traces;
        hops.push(hd);
        report.push(rep);
    }
    let outputs = last
        .into_iter()
        .map(|t| Ok(finalize(config, t.output().clone())?.1))
        .collect::<Result<_>>()?;
    Ok(DecoderFit {
        model: DecoderModel {
            config: config.clone(),
            hops,
        },
        report,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encoder_fit_with_features, EncoderConfig};

    #[test]
    fn position_encoding_corners_and_centre() {
        let p = position_encoding([3, 3, 3]).unwrap();
        assert_eq!(p.voxel(0, 0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(p.voxel(2, 2, 2), &[1.0, 1.0, 1.0]);
        assert_eq!(p.voxel(1, 1, 1), &[0.5, 0.5, 0.5]);
        let q = position_encoding([4, 1, 2]).unwrap();
        assert_eq!(q.voxel(3, 0, 1), &[0.5, 1.0, 1.0]);
    }

    #[test]
    fn downsampling_midpoint_is_excluded() {
        let mask = LabelVolume::new([1, 2, 1], vec![0, 1]).unwrap();
        let s = supervise(&mask, [1, 1, 1], 2, 0.9).unwrap();
        assert_eq!(s.soft.data(), &[0.5, 0.5]);
        assert!(!s.selected[0]);
        assert!(matches!(
            downsample_labels(&mask, [1, 1, 1], 2, 0.9),
            Err(Error::EmptySupervision { .. })
        ));
        assert_eq!(downsample_labels(&mask, [1, 1, 1], 2, 0.0).unwrap().n_selected(), 1);
    }

    #[test]
    fn uniform_mask_fully_selected() {
        let mask = LabelVolume::filled([8, 8, 4], 1);
        let s = downsample_labels(&mask, [2, 2, 1], 2, 0.9).unwrap();
        assert_eq!(s.n_selected(), 4);
        assert!(s.labels.data().iter().all(|&l| l == 1));
    }

    #[test]
    fn fp_width_grows_by_class_count() {
        let n = 2;
        let soft4 = Volume4D::filled(Shape::new(2, 2, 1, n), 0.5).unwrap();
        let fp3 = propagate(None, &soft4, [4, 4, 2]).unwrap();
        let soft3 = Volume4D::filled(Shape::new(4, 4, 2, n), 0.5).unwrap();
        let fp2 = propagate(Some(&fp3), &soft3, [8, 8, 4]).unwrap();
        let soft2 = Volume4D::filled(Shape::new(8, 8, 4, n), 0.5).unwrap();
        let fp1 = propagate(Some(&fp2), &soft2, [16, 16, 8]).unwrap();
        assert_eq!(fp1.shape().k, n * 3);
        assert!(fp1.data().iter().all(|&x| x == 0.5));
        let fe = Volume4D::zeros(Shape::new(16, 16, 8, 5)).unwrap();
        assert_eq!(aggregate_features(&fe, Some(&fp1)).unwrap().shape().k, 3 + 6 + 5);
        assert_eq!(aggregate_features(&soft4, None).unwrap().shape().k, 3 + n);
    }

    #[test]
    fn argmax_ties_go_low() {
        let soft = Volume4D::new(Shape::new(1, 2, 1, 3), vec![0.4, 0.4, 0.2, 0.2, 0.4, 0.4]).unwrap();
        assert_eq!(argmax_labels(&soft).data(), &[0, 1]);
    }

    fn cube_case() -> (Volume4D, LabelVolume) {
        let dims = [32, 32, 8];
        let inside = |h: usize, w: usize, c: usize| (8..24).contains(&h) && (8..24).contains(&w) && (1..7).contains(&c);
        let img = Volume4D::from_fn(Shape::from_spatial(dims, 1), |h, w, c, _| if inside(h, w, c) { 0.8 } else { 0.2 }).unwrap();
        let mask = LabelVolume::from_fn(dims, |h, w, c| u8::from(inside(h, w, c)));
        (img, mask)
    }

    fn quick_config() -> DecoderConfig {
        DecoderConfig {
            main: BoostParams {
                n_rounds: 20,
                max_depth: 4,
                ..BoostParams::default()
            },
            refine_rounds: 10,
            confidence_threshold: 0.5,
            ..DecoderConfig::default()
        }
    }

    #[test]
    fn solid_cube_overfits_and_predict_matches_fit() {
        let (img, mask) = cube_case();
        let enc = EncoderConfig {
            hops: 3,
            energy_threshold: 0.001,
            ..EncoderConfig::default()
        };
        let (_, feats) = encoder_fit_with_features(std::slice::from_ref(&img), &enc).unwrap();
        let fit = decoder_fit(&feats, std::slice::from_ref(&mask), &quick_config()).unwrap();
        assert_eq!(fit.model.hops.iter().map(|h| h.hop).collect::<Vec<_>>(), vec![3, 2, 1]);
        let out = &fit.outputs[0];
        assert!(mean_foreground_dsc(&out.labels, &mask, 2).unwrap() >= 0.95);
        let again = decoder_predict_traced(&fit.model, &feats[0]).unwrap();
        assert_eq!(&again.output, out);
        for t in &again.hops {
            for soft in std::iter::once(&t.main).chain(&t.refined) {
                for v in soft.data().chunks_exact(2) {
                    assert!(((v[0] + v[1]) - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn all_background_fails_at_coarsest_hop() {
        let (img, _) = cube_case();
        let mask = LabelVolume::filled([32, 32, 8], 0);
        let enc = EncoderConfig {
            hops: 3,
            ..EncoderConfig::default()
        };
        let (_, feats) = encoder_fit_with_features(std::slice::from_ref(&img), &enc).unwrap();
        let err = decoder_fit(&feats, &[mask], &quick_config()).unwrap_err();
        assert_eq!(err.hop(), Some(3));
        assert!(matches!(err.root(), Error::DegenerateLabels(_)));
    }

    #[test]
    fn zero_refinements_is_identity_and_constant_stays_constant() {
        let soft = Volume4D::filled(Shape::new(4, 4, 2, 2), 0.5).unwrap();
        assert_eq!(sls_refine(&soft, &[], [3, 3, 3]).unwrap(), soft);
        let x = RowMatrix::new(4, 54, (0..4 * 54).map(|i| (i % 7) as f32).collect()).unwrap();
        let e = ensemble_fit(&x, &[0, 1, 0, 1], 2, &BoostParams { n_rounds: 3, ..Default::default() }).unwrap();
        let out = sls_refine(&soft, &[e], [3, 3, 3]).unwrap();
        assert!(out.data().chunks_exact(2).all(|v| v == &out.data()[..2]));
    }

    #[test]
    fn budget_caps_majority() {
        let mask = LabelVolume::from_fn([10, 10, 1], |h, _, _| u8::from(h == 0));
        let s = supervise(&mask, [10, 10, 1], 2, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chosen = choose_samples(&[s.clone()], &DecoderConfig::default(), &mut rng);
        let labels: Vec<u8> = chosen[0].iter().map(|&i| s.labels.data()[i]).collect();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 10);
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 30);
    }
}
