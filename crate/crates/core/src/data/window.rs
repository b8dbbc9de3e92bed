use std::sync::Arc;

use super::{Channel, DataError, SeriesStore, FEATURES_PER_STEP};
use crate::region::RegionGraph;

/// One supervised sample anchored at time index `anchor`.
///
/// Basins follow the declaration order of the owning set's graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub anchor: usize,
    /// `basins × window × FEATURES_PER_STEP`, row-major.
    pub features: Vec<f64>,
    /// Level at `anchor + horizon`.
    pub labels: Vec<f64>,
    /// Level at `anchor`.
    pub persist: Vec<f64>,
}

impl Example {
    /// Feature window of one basin, `window × FEATURES_PER_STEP` row-major.
    pub fn window(&self, basin: usize) -> &[f64] {
        let stride = self.features.len() / self.labels.len();
        &self.features[basin * stride..(basin + 1) * stride]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    graph: Arc<RegionGraph>,
    window: usize,
    horizon: usize,
    examples: Vec<Example>,
}

impl ExampleSet {
    /// Assemble a set from prepared examples; anchors must be strictly increasing.
    pub fn from_examples(
        graph: Arc<RegionGraph>,
        window: usize,
        horizon: usize,
        examples: Vec<Example>,
    ) -> Result<ExampleSet, DataError> {
        if window == 0 || horizon == 0 {
            return Err(DataError::ZeroWindow);
        }
        let n = graph.len();
        let width = n * window * FEATURES_PER_STEP;
        for ex in &examples {
            if ex.features.len() != width || ex.labels.len() != n || ex.persist.len() != n {
                return Err(DataError::InvalidConfig(format!(
                    "example at anchor {} does not match {n} basins x {window} steps",
                    ex.anchor
                )));
            }
        }
        if examples.windows(2).any(|w| w[0].anchor >= w[1].anchor) {
            return Err(DataError::InvalidConfig("anchors must be strictly increasing".into()));
        }
        Ok(ExampleSet {
            graph,
            window,
            horizon,
            examples,
        })
    }

    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<RegionGraph> {
        Arc::clone(&self.graph)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn features_per_step(&self) -> usize {
        FEATURES_PER_STEP
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn anchors(&self) -> impl Iterator<Item = usize> + '_ {
        self.examples.iter().map(|e| e.anchor)
    }

    fn with_examples(&self, examples: Vec<Example>) -> ExampleSet {
        ExampleSet {
            graph: Arc::clone(&self.graph),
            window: self.window,
            horizon: self.horizon,
            examples,
        }
    }

    /// The most recent `n` examples (all of them if `n >= len`).
    pub fn most_recent(&self, n: usize) -> ExampleSet {
        let skip = self.examples.len().saturating_sub(n);
        self.with_examples(self.examples[skip..].to_vec())
    }

    /// Project every example onto the basins of `sub`, a subgraph of this set's graph.
    pub fn restrict(&self, sub: &RegionGraph) -> Result<ExampleSet, DataError> {
        let map: Vec<usize> = sub
            .basin_ids()
            .map(|id| {
                self.graph
                    .index_of(id)
                    .ok_or_else(|| DataError::MissingBasin(id.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let examples = self
            .examples
            .iter()
            .map(|ex| Example {
                anchor: ex.anchor,
                features: map.iter().flat_map(|&b| ex.window(b).iter().copied()).collect(),
                labels: map.iter().map(|&b| ex.labels[b]).collect(),
                persist: map.iter().map(|&b| ex.persist[b]).collect(),
            })
            .collect();
        Ok(ExampleSet {
            graph: Arc::new(sub.clone()),
            window: self.window,
            horizon: self.horizon,
            examples,
        })
    }
}

/// Cut `s` into examples with feature window `window` and label `horizon` steps ahead.
///
/// Anchors run over `window-1 ..= len-1-horizon`; any example touching a missing
/// value is dropped.
pub fn window_examples(
    s: &SeriesStore,
    g: &RegionGraph,
    window: usize,
    horizon: usize,
) -> Result<ExampleSet, DataError> {
    if window == 0 || horizon == 0 {
        return Err(DataError::ZeroWindow);
    }
    let len = s.len();
    if len < window + horizon {
        return Err(DataError::SeriesTooShort {
            len,
            window,
            horizon,
        });
    }
    let cols: Vec<usize> = g
        .basin_ids()
        .map(|id| s.index_of(id).ok_or_else(|| DataError::MissingBasin(id.to_string())))
        .collect::<Result<_, _>>()?;

    let n = cols.len();
    let mut examples = Vec::with_capacity(len + 1 - window - horizon);
    'anchor: for t in window - 1..=len - 1 - horizon {
        let mut features = Vec::with_capacity(n * window * FEATURES_PER_STEP);
        let mut labels = Vec::with_capacity(n);
        let mut persist = Vec::with_capacity(n);
        for &c in &cols {
            let precip = s.series(c, Channel::Precip);
            let level = s.series(c, Channel::Level);
            for step in t + 1 - window..=t {
                let (p, l) = (precip[step], level[step]);
                if p.is_nan() || l.is_nan() {
                    continue 'anchor;
                }
                features.push(p);
                features.push(l);
            }
            let (y, now) = (level[t + horizon], level[t]);
            if y.is_nan() {
                continue 'anchor;
            }
            labels.push(y);
            persist.push(now);
        }
        examples.push(Example {
            anchor: t,
            features,
            labels,
            persist,
        });
    }
    Ok(ExampleSet {
        graph: Arc::new(g.clone()),
        window,
        horizon,
        examples,
    })
}

/// Examples anchored before `boundary` train, the rest test.
pub fn split_chronological(
    e: &ExampleSet,
    boundary: usize,
) -> Result<(ExampleSet, ExampleSet), DataError> {
    let cut = e.examples.partition_point(|ex| ex.anchor < boundary);
    if cut == 0 {
        return Err(DataError::EmptyTrain);
    }
    if cut == e.examples.len() {
        return Err(DataError::EmptyTest);
    }
    Ok((
        e.with_examples(e.examples[..cut].to_vec()),
        e.with_examples(e.examples[cut..].to_vec()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{Basin, RegionGraph};

    fn pair() -> RegionGraph {
        RegionGraph::new(
            vec![Basin::new("up"), Basin::new("down")],
            vec![("up".into(), "down".into())],
        )
        .unwrap()
    }

    fn ramp(len: usize) -> SeriesStore {
        let p = |k: f64| (0..len).map(|t| k + t as f64).collect::<Vec<_>>();
        SeriesStore::new(
            vec!["down".into(), "up".into()],
            0,
            3600,
            vec![p(0.0), p(1000.0)],
            vec![p(0.5), p(1000.5)],
        )
        .unwrap()
    }

    #[test]
    fn count_formula() {
        let set = window_examples(&ramp(100), &pair(), 30, 2).unwrap();
        assert_eq!(set.len(), 69);
        assert_eq!(set.examples()[0].anchor, 29);
        assert_eq!(set.examples()[68].anchor, 97);
        let exact = window_examples(&ramp(32), &pair(), 30, 2).unwrap();
        assert_eq!(exact.len(), 1);
        assert_eq!(
            window_examples(&ramp(31), &pair(), 30, 2).unwrap_err().code(),
            "series-too-short"
        );
    }

    #[test]
    fn window_contents_follow_graph_order() {
        let set = window_examples(&ramp(10), &pair(), 3, 2).unwrap();
        let ex = &set.examples()[0];
        assert_eq!(ex.anchor, 2);
        // graph order is [up, down]; store order is [down, up]
        assert_eq!(ex.window(0), &[1000.0, 1000.5, 1001.0, 1001.5, 1002.0, 1002.5]);
        assert_eq!(ex.window(1), &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5]);
        assert_eq!(ex.labels, vec![1004.5, 4.5]);
        assert_eq!(ex.persist, vec![1002.5, 2.5]);
    }

    #[test]
    fn missing_values_drop_examples() {
        let mut s = ramp(100);
        s.series_mut(0, Channel::Level)[99] = f64::NAN;
        let set = window_examples(&s, &pair(), 30, 2).unwrap();
        assert_eq!(set.len(), 68);
        assert!(set.anchors().all(|a| a != 97));

        let mut s = ramp(100);
        s.series_mut(1, Channel::Precip)[50] = f64::NAN;
        let set = window_examples(&s, &pair(), 30, 2).unwrap();
        // anchors 50..=79 read index 50
        assert_eq!(set.len(), 69 - 30);
    }

    #[test]
    fn split_is_partition() {
        let set = window_examples(&ramp(100), &pair(), 30, 2).unwrap();
        let (train, test) = split_chronological(&set, 63).unwrap();
        assert_eq!(train.len() + test.len(), 69);
        assert!(train.anchors().all(|a| a < 63));
        assert!(test.anchors().all(|a| a >= 63));
        assert_eq!(split_chronological(&set, 29).unwrap_err(), DataError::EmptyTrain);
        assert_eq!(split_chronological(&set, 98).unwrap_err(), DataError::EmptyTest);
    }

    #[test]
    fn restrict_and_most_recent() {
        let set = window_examples(&ramp(10), &pair(), 3, 2).unwrap();
        let only_down =
            RegionGraph::new(vec![Basin::new("down")], vec![]).unwrap();
        let r = set.restrict(&only_down).unwrap();
        assert_eq!(r.examples()[0].window(0), set.examples()[0].window(1));
        assert_eq!(r.examples()[0].labels, vec![4.5]);
        let tail = set.most_recent(2);
        assert_eq!(tail.anchors().collect::<Vec<_>>(), vec![6, 7]);
        assert_eq!(set.most_recent(100).len(), set.len());
    }
}
