//! Mutual information over a grid of past/future context sizes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditional::{constrain, logpdf, DistError};
use crate::corpus::{FeatureKind, FeatureSeries};
use crate::density::{kde_nll, EntropyEstimate, KdeModel};
use crate::numeric::{fmt_exact, mean, sem};
use crate::predictor::{ContextWindow, PredictError, Predictor, MAX_WINDOW};

/// Windows sent to a predictor per call.
const CHUNK: usize = 16_384;

pub const DEFAULT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no test position supplies {n} past and {m} future words")]
    NoEligible { n: usize, m: usize },
    #[error("no test values")]
    EmptyTest,
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("grids have different cell support")]
    SupportMismatch,
    #[error("no grids to average")]
    NoGrids,
    #[error("{axis} axis is not populated from 0 through its longest context")]
    UnpopulatedAxis { axis: Axis },
    #[error("malformed grid CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a grid describes: one feature or the cross-feature average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GridLabel {
    Feature(FeatureKind),
    Average,
}

impl GridLabel {
    pub fn name(self) -> &'static str {
        match self {
            GridLabel::Feature(f) => f.name(),
            GridLabel::Average => "average",
        }
    }
}

impl fmt::Display for GridLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "average" {
            Ok(GridLabel::Average)
        } else {
            s.parse::<FeatureKind>()
                .map(GridLabel::Feature)
                .map_err(|e| e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub h_cond: f64,
    pub mi: f64,
    pub sem: f64,
    pub samples: usize,
}

impl Cell {
    /// The conditional model did worse than the unconditional one.
    pub fn is_negative(&self) -> bool {
        self.mi < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiGrid {
    pub label: GridLabel,
    pub h_uncond: f64,
    pub cells: BTreeMap<(usize, usize), Cell>,
}

impl MiGrid {
    pub fn get(&self, n: usize, m: usize) -> Option<&Cell> {
        self.cells.get(&(n, m))
    }

    pub fn negative_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .filter(|(_, c)| c.is_negative())
            .map(|(&k, _)| k)
            .collect()
    }
}

/// Per-sample negative log-likelihoods of one cell and whether they cover
/// exactly the positions scored by the unconditional model.
#[derive(Debug, Clone)]
pub struct CellNll {
    pub nll: Vec<f64>,
    pub covers_all: bool,
}

/// Windows and target values for every position with a full window.
pub fn eligible_windows(
    test: &FeatureSeries,
    n: usize,
    m: usize,
) -> (Vec<ContextWindow<'_>>, Vec<f64>) {
    let mut windows = Vec::new();
    let mut values = Vec::new();
    for u in &test.utterances {
        for (t, v) in u.values.iter().enumerate() {
            let Some(y) = v else { continue };
            if let Some(w) = ContextWindow::around(&u.tokens, t, n, m) {
                windows.push(w);
                values.push(*y);
            }
        }
    }
    (windows, values)
}

/// Negative log-likelihood of each eligible test value under the predicted
/// conditional, in corpus order.
pub fn conditional_nll<P: Predictor + ?Sized>(
    predictor: &P,
    test: &FeatureSeries,
    n: usize,
    m: usize,
) -> Result<Vec<f64>, SweepError> {
    if n + 1 + m > MAX_WINDOW {
        return Err(PredictError::WindowLength(n + 1 + m).into());
    }
    let (windows, values) = eligible_windows(test, n, m);
    if windows.is_empty() {
        return Err(SweepError::NoEligible { n, m });
    }
    let family = predictor.family();
    let mut nll = Vec::with_capacity(values.len());
    for (ws, ys) in windows.chunks(CHUNK).zip(values.chunks(CHUNK)) {
        let raw = predictor.predict_raw(ws)?;
        for (r, &y) in raw.into_iter().zip(ys) {
            nll.push(-logpdf(&constrain(r, family), y)?);
        }
    }
    Ok(nll)
}

pub fn conditional_entropy<P: Predictor + ?Sized>(
    predictor: &P,
    test: &FeatureSeries,
    n: usize,
    m: usize,
) -> Result<EntropyEstimate, SweepError> {
    let nll = conditional_nll(predictor, test, n, m)?;
    Ok(EntropyEstimate::from_nll(&nll).expect("non-empty"))
}

/// Subtracts each cell's conditional entropy from the unconditional one.
/// When a cell scored the same samples as the unconditional model, its SEM
/// comes from the paired per-sample differences; otherwise the two SEMs
/// add in quadrature.
pub fn mi_grid(
    label: GridLabel,
    uncond_nll: &[f64],
    cells: BTreeMap<(usize, usize), CellNll>,
) -> Result<MiGrid, SweepError> {
    let h_u = EntropyEstimate::from_nll(uncond_nll).ok_or(SweepError::EmptyTest)?;
    let cells = cells
        .into_iter()
        .map(|(key, c)| {
            let h_c = EntropyEstimate::from_nll(&c.nll)
                .ok_or(SweepError::NoEligible { n: key.0, m: key.1 })?;
            let err = if c.covers_all && c.nll.len() == uncond_nll.len() {
                let diffs: Vec<f64> = uncond_nll.iter().zip(&c.nll).map(|(u, c)| u - c).collect();
                sem(&diffs)
            } else {
                h_u.sem.hypot(h_c.sem)
            };
            let cell = Cell {
                h_cond: h_c.value,
                mi: h_u.value - h_c.value,
                sem: err,
                samples: h_c.n,
            };
            Ok((key, cell))
        })
        .collect::<Result<_, SweepError>>()?;
    Ok(MiGrid {
        label,
        h_uncond: h_u.value,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBounds {
    pub max_past: usize,
    pub max_future: usize,
}

impl Default for SweepBounds {
    fn default() -> Self {
        SweepBounds {
            max_past: 10,
            max_future: 10,
        }
    }
}

impl SweepBounds {
    /// Cells that fit both the bounds and the predictor's longest window.
    pub fn cells(&self, max_window: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for n in 0..=self.max_past {
            for m in 0..=self.max_future {
                if n + m < max_window.min(MAX_WINDOW) {
                    out.push((n, m));
                }
            }
        }
        out
    }
}

/// Full grid for one feature. Cells without any eligible test position
/// are left out.
pub fn sweep<P: Predictor + ?Sized>(
    label: GridLabel,
    predictor: &P,
    kde: &KdeModel,
    test: &FeatureSeries,
    bounds: &SweepBounds,
) -> Result<MiGrid, SweepError> {
    let values = test.values();
    if values.is_empty() {
        return Err(SweepError::EmptyTest);
    }
    let uncond = kde_nll(kde, &values);
    let mut cells = BTreeMap::new();
    for (n, m) in bounds.cells(predictor.max_window()) {
        match conditional_nll(predictor, test, n, m) {
            Ok(nll) => {
                let covers_all = nll.len() == values.len();
                cells.insert((n, m), CellNll { nll, covers_all });
            }
            Err(SweepError::NoEligible { .. }) => {
                log::warn!("{label}: no eligible positions for n={n}, m={m}");
            }
            Err(e) => return Err(e),
        }
    }
    let grid = mi_grid(label, &uncond, cells)?;
    for (n, m) in grid.negative_cells() {
        log::warn!("{label}: negative MI at n={n}, m={m}");
    }
    Ok(grid)
}

/// Cell-wise mean across grids. Entropies are averaged and MI recomputed
/// from the averages; SEMs combine as `sqrt(sum sem^2) / k`.
pub fn average_grids(grids: &[MiGrid]) -> Result<MiGrid, SweepError> {
    let first = grids.first().ok_or(SweepError::NoGrids)?;
    let keys: Vec<_> = first.cells.keys().copied().collect();
    if grids
        .iter()
        .any(|g| !g.cells.keys().copied().eq(keys.iter().copied()))
    {
        return Err(SweepError::SupportMismatch);
    }
    let k = grids.len() as f64;
    let h_uncond = mean(&grids.iter().map(|g| g.h_uncond).collect::<Vec<_>>());
    let cells = keys
        .into_iter()
        .map(|key| {
            let cs: Vec<&Cell> = grids.iter().map(|g| &g.cells[&key]).collect();
            let h_cond = mean(&cs.iter().map(|c| c.h_cond).collect::<Vec<_>>());
            let sem = cs.iter().map(|c| c.sem * c.sem).sum::<f64>().sqrt() / k;
            let samples = cs.iter().map(|c| c.samples).min().unwrap_or(0);
            let cell = Cell {
                h_cond,
                mi: h_uncond - h_cond,
                sem,
                samples,
            };
            (key, cell)
        })
        .collect();
    Ok(MiGrid {
        label: GridLabel::Average,
        h_uncond,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Row `m = 0`, growing `n`.
    Past,
    /// Column `n = 0`, growing `m`.
    Future,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Past => "past",
            Axis::Future => "future",
        })
    }
}

fn axis_curve(grid: &MiGrid, axis: Axis) -> Result<Vec<Cell>, SweepError> {
    let key = |k: usize| match axis {
        Axis::Past => (k, 0),
        Axis::Future => (0, k),
    };
    let longest = grid
        .cells
        .keys()
        .filter_map(|&(n, m)| match axis {
            Axis::Past if m == 0 => Some(n),
            Axis::Future if n == 0 => Some(m),
            _ => None,
        })
        .max()
        .ok_or(SweepError::UnpopulatedAxis { axis })?;
    (0..=longest)
        .map(|k| {
            grid.get(key(k).0, key(k).1)
                .copied()
                .ok_or(SweepError::UnpopulatedAxis { axis })
        })
        .collect()
}

/// Smallest context length along `axis` whose MI comes within
/// `max(tolerance, sem)` of the MI at the longest available context.
pub fn detect_plateau(grid: &MiGrid, axis: Axis, tolerance: f64) -> Result<usize, SweepError> {
    let curve = axis_curve(grid, axis)?;
    let reference = curve.last().expect("non-empty");
    let threshold = reference.mi - tolerance.max(reference.sem);
    Ok(curve
        .iter()
        .position(|c| c.mi >= threshold)
        .expect("the reference meets its own threshold"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReference {
    /// Longest context on the axis.
    pub context: usize,
    pub mi: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub feature: String,
    pub past_scale: usize,
    pub future_scale: usize,
    pub tolerance: f64,
    pub past_reference: AxisReference,
    pub future_reference: AxisReference,
    pub negative_cells: Vec<[usize; 2]>,
}

impl PlateauReport {
    pub fn from_grid(grid: &MiGrid, tolerance: f64) -> Result<Self, SweepError> {
        let reference = |axis| -> Result<AxisReference, SweepError> {
            let curve = axis_curve(grid, axis)?;
            let last = curve.last().expect("non-empty");
            Ok(AxisReference {
                context: curve.len() - 1,
                mi: last.mi,
                sem: last.sem,
            })
        };
        Ok(PlateauReport {
            feature: grid.label.name().to_owned(),
            past_scale: detect_plateau(grid, Axis::Past, tolerance)?,
            future_scale: detect_plateau(grid, Axis::Future, tolerance)?,
            tolerance,
            past_reference: reference(Axis::Past)?,
            future_reference: reference(Axis::Future)?,
            negative_cells: grid
                .negative_cells()
                .into_iter()
                .map(|(n, m)| [n, m])
                .collect(),
        })
    }
}

pub const GRID_HEADER: &str = "feature,n,m,h_uncond,h_cond,mi,sem,samples";

/// Writes the grid as CSV rows ordered by `(n, m)`, after optional
/// `# `-prefixed comment lines.
pub fn write_grid_csv(
    grid: &MiGrid,
    comments: &[String],
    mut w: impl Write,
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{GRID_HEADER}")?;
    for (&(n, m), c) in &grid.cells {
        writeln!(
            w,
            "{},{n},{m},{},{},{},{},{}",
            grid.label,
            fmt_exact(grid.h_uncond),
            fmt_exact(c.h_cond),
            fmt_exact(c.mi),
            fmt_exact(c.sem),
            c.samples
        )?;
    }
    Ok(())
}

pub fn read_grid_csv(r: impl BufRead) -> Result<MiGrid, SweepError> {
    let mut label = None;
    let mut h_uncond = None;
    let mut cells = BTreeMap::new();
    let mut header_seen = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let bad = |message: String| SweepError::Csv {
            line: line_no,
            message,
        };
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != GRID_HEADER {
                return Err(bad(format!("expected header {GRID_HEADER:?}")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, SweepError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("field {}: {e}", i + 1)))
        };
        let int = |i: usize| -> Result<usize, SweepError> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| bad(format!("field {}: {e}", i + 1)))
        };
        let l: GridLabel = fields[0].parse().map_err(bad)?;
        if *label.get_or_insert(l) != l {
            return Err(bad("mixed feature labels".into()));
        }
        let hu = num(3)?;
        if *h_uncond.get_or_insert(hu) != hu {
            return Err(bad("h_uncond differs between rows".into()));
        }
        let cell = Cell {
            h_cond: num(4)?,
            mi: num(5)?,
            sem: num(6)?,
            samples: int(7)?,
        };
        cells.insert((int(1)?, int(2)?), cell);
    }
    match (label, h_uncond) {
        (Some(label), Some(h_uncond)) => Ok(MiGrid {
            label,
            h_uncond,
            cells,
        }),
        _ => Err(SweepError::Csv {
            line: 0,
            message: "no data rows".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::DistFamily;
    use crate::corpus::SeriesUtterance;
    use proptest::prelude::*;

    fn curve_grid(past: &[f64], future: &[f64], sem: f64) -> MiGrid {
        let mut cells = BTreeMap::new();
        let cell = |mi: f64| Cell {
            h_cond: 1.0 - mi,
            mi: 1.0 - (1.0 - mi),
            sem,
            samples: 10,
        };
        for (k, &mi) in past.iter().enumerate() {
            cells.insert((k, 0), cell(mi));
        }
        for (k, &mi) in future.iter().enumerate().skip(1) {
            cells.insert((0, k), cell(mi));
        }
        MiGrid {
            label: GridLabel::Feature(FeatureKind::Pitch),
            h_uncond: 1.0,
            cells,
        }
    }

    #[test]
    fn step_curve_plateaus_at_three() {
        let g = curve_grid(&[0.0, 0.1, 0.2, 0.3, 0.3, 0.3, 0.3], &[0.0, 0.0], 0.001);
        assert_eq!(detect_plateau(&g, Axis::Past, 0.02).unwrap(), 3);
    }

    #[test]
    fn flat_curve_plateaus_at_zero() {
        let g = curve_grid(&[0.1; 11], &[0.1; 11], 0.0);
        assert_eq!(detect_plateau(&g, Axis::Past, 0.02).unwrap(), 0);
        assert_eq!(detect_plateau(&g, Axis::Future, 0.02).unwrap(), 0);
    }

    #[test]
    fn large_sem_widens_tolerance() {
        let g = curve_grid(&[0.0, 0.25, 0.3], &[0.0], 0.06);
        assert_eq!(detect_plateau(&g, Axis::Past, 0.02).unwrap(), 1);
    }

    #[test]
    fn gap_in_axis_is_an_error() {
        let mut g = curve_grid(&[0.0, 0.1, 0.2], &[0.0], 0.0);
        g.cells.remove(&(1, 0));
        assert!(matches!(
            detect_plateau(&g, Axis::Past, 0.02),
            Err(SweepError::UnpopulatedAxis { axis: Axis::Past })
        ));
    }

    proptest! {
        #[test]
        fn plateau_shift_invariant(
            curve in proptest::collection::vec(-1.0f64..1.0, 1..11),
            shift in -5.0f64..5.0,
        ) {
            // dyadic values keep the shifted comparisons exact
            let curve: Vec<f64> = curve.iter().map(|v| (v * 1024.0).round() / 1024.0).collect();
            let shift = (shift * 16.0).round() / 16.0;
            let shifted: Vec<f64> = curve.iter().map(|v| v + shift).collect();
            let a = curve_grid(&curve, &[0.0], 0.0);
            let b = curve_grid(&shifted, &[0.0], 0.0);
            prop_assert_eq!(
                detect_plateau(&a, Axis::Past, 0.03125).unwrap(),
                detect_plateau(&b, Axis::Past, 0.03125).unwrap()
            );
        }
    }

    #[test]
    fn subtraction_and_negative_flag() {
        let uncond = vec![1.0; 4];
        let mut cells = BTreeMap::new();
        cells.insert(
            (0, 0),
            CellNll {
                nll: vec![0.6; 4],
                covers_all: true,
            },
        );
        cells.insert(
            (1, 0),
            CellNll {
                nll: vec![1.2; 3],
                covers_all: false,
            },
        );
        let g = mi_grid(GridLabel::Average, &uncond, cells).unwrap();
        assert!((g.get(0, 0).unwrap().mi - 0.4).abs() < 1e-12);
        assert!(g.get(1, 0).unwrap().mi < 0.0);
        assert_eq!(g.negative_cells(), vec![(1, 0)]);
    }

    #[test]
    fn paired_sem_uses_differences() {
        let uncond = vec![1.0, 2.0, 3.0, 4.0];
        let cond = vec![0.5, 1.5, 2.5, 3.5];
        let mut cells = BTreeMap::new();
        cells.insert(
            (0, 0),
            CellNll {
                nll: cond.clone(),
                covers_all: true,
            },
        );
        let g = mi_grid(GridLabel::Average, &uncond, cells).unwrap();
        assert_eq!(g.get(0, 0).unwrap().sem, 0.0);

        let mut cells = BTreeMap::new();
        cells.insert(
            (0, 0),
            CellNll {
                nll: cond.clone(),
                covers_all: false,
            },
        );
        let g = mi_grid(GridLabel::Average, &uncond, cells).unwrap();
        let expected = (sem(&uncond).powi(2) + sem(&cond).powi(2)).sqrt();
        assert!((g.get(0, 0).unwrap().sem - expected).abs() < 1e-15);
    }

    fn two_cell_grid(label: GridLabel, hu: f64, hc: f64, sem: f64) -> MiGrid {
        let cells = BTreeMap::from([(
            (0, 0),
            Cell {
                h_cond: hc,
                mi: hu - hc,
                sem,
                samples: 5,
            },
        )]);
        MiGrid {
            label,
            h_uncond: hu,
            cells,
        }
    }

    #[test]
    fn averaging() {
        let a = two_cell_grid(GridLabel::Feature(FeatureKind::Pitch), 1.0, 0.8, 0.03);
        let b = two_cell_grid(GridLabel::Feature(FeatureKind::Energy), 1.0, 0.6, 0.04);
        let avg = average_grids(&[a.clone(), b]).unwrap();
        let c = avg.get(0, 0).unwrap();
        assert!((c.mi - 0.3).abs() < 1e-12);
        assert!((c.sem - 0.025).abs() < 1e-12);
        assert_eq!(avg.label, GridLabel::Average);

        let same = average_grids(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.get(0, 0).unwrap().mi, a.get(0, 0).unwrap().mi);
        assert_eq!(same.h_uncond, a.h_uncond);
    }

    #[test]
    fn averaging_requires_same_support() {
        let a = two_cell_grid(GridLabel::Average, 1.0, 0.8, 0.0);
        let mut b = a.clone();
        b.cells.insert((1, 0), *a.get(0, 0).unwrap());
        assert!(matches!(
            average_grids(&[a, b]),
            Err(SweepError::SupportMismatch)
        ));
        assert!(matches!(average_grids(&[]), Err(SweepError::NoGrids)));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = curve_grid(&[0.0, 0.123456789012345, -0.1 / 3.0], &[0.0, 1e-300], 0.017);
        let mut buf = Vec::new();
        write_grid_csv(&g, &["seed 1".into()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed 1\nfeature,n,m,"));
        let back = read_grid_csv(&buf[..]).unwrap();
        assert_eq!(back, g);
        for c in back.cells.values() {
            assert_eq!(back.h_uncond - c.h_cond, c.mi);
        }
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = format!("{GRID_HEADER}\npitch,0,0,1.0,0.5,0.5,0.1\n");
        assert!(matches!(
            read_grid_csv(text.as_bytes()),
            Err(SweepError::Csv { line: 2, .. })
        ));
    }

    struct Lookup {
        table: BTreeMap<String, f64>,
    }

    impl Predictor for Lookup {
        fn family(&self) -> DistFamily {
            DistFamily::Gaussian
        }

        fn predict_raw(
            &self,
            windows: &[ContextWindow<'_>],
        ) -> Result<Vec<[f64; 2]>, PredictError> {
            Ok(windows
                .iter()
                .map(|w| [self.table[w.tokens()[w.target_index()]], -60.0])
                .collect())
        }
    }

    fn series(lens: &[usize]) -> FeatureSeries {
        let utterances = lens
            .iter()
            .map(|&l| SeriesUtterance {
                tokens: (0..l).map(|i| format!("t{}", i % 2)).collect(),
                values: (0..l)
                    .map(|i| Some(if i % 2 == 0 { -1.0 } else { 1.0 }))
                    .collect(),
            })
            .collect();
        FeatureSeries {
            feature: FeatureKind::Pitch,
            utterances,
        }
    }

    fn lookup() -> Lookup {
        Lookup {
            table: BTreeMap::from([("t0".into(), -1.0), ("t1".into(), 1.0)]),
        }
    }

    #[test]
    fn no_context_cell_uses_every_word() {
        let s = series(&[1, 1, 1]);
        let nll = conditional_nll(&lookup(), &s, 0, 0).unwrap();
        assert_eq!(nll.len(), 3);
    }

    #[test]
    fn long_context_on_short_utterances_is_an_error() {
        let s = series(&[5, 5]);
        assert!(matches!(
            conditional_entropy(&lookup(), &s, 10, 0),
            Err(SweepError::NoEligible { n: 10, m: 0 })
        ));
        assert_eq!(conditional_nll(&lookup(), &s, 2, 2).unwrap().len(), 2);
    }

    #[test]
    fn perfect_predictor_reaches_scale_floor() {
        let s = series(&[4, 6]);
        let h = conditional_entropy(&lookup(), &s, 0, 0).unwrap();
        let floor = crate::numeric::softplus(-60.0) + crate::conditional::SCALE_FLOOR;
        // every value sits exactly on its predicted mean
        let expected = 0.5 * (2.0 * std::f64::consts::PI).ln() + floor.ln();
        assert!(
            (h.value - expected).abs() < 1e-9,
            "{} vs {expected}",
            h.value
        );
    }

    #[test]
    fn bounds_respect_window_limit() {
        let b = SweepBounds::default();
        assert_eq!(b.cells(11).len(), 66);
        assert_eq!(b.cells(10).len(), 55);
        assert!(b.cells(3).iter().all(|&(n, m)| n + m <= 2));
    }
}
