//! Scattering streams fed to the PCA layers, and their channel reduction.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShdlError};
use crate::scatter::{FeatureHeader, PathDescriptor, ScatterFeatures, ScatterLayer};

/// How aggressively paths are averaged into stream channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    None,
    /// Average over the second orientation.
    SecondOrientation,
    /// Also average over colour.
    Colour,
    /// Also average over the first orientation.
    FirstOrientation,
}

const REDUCTIONS: [Reduction; 4] = [
    Reduction::None,
    Reduction::SecondOrientation,
    Reduction::Colour,
    Reduction::FirstOrientation,
];

impl Reduction {
    fn key(self, p: &PathDescriptor) -> PathDescriptor {
        let mut k = *p;
        if self >= Reduction::SecondOrientation {
            k.r2 = None;
        }
        if self >= Reduction::Colour {
            k.color = 0;
        }
        if self >= Reduction::FirstOrientation {
            k.r1 = None;
        }
        k
    }
}

/// One stream: its channels are means of groups of scattering maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLayout {
    pub name: String,
    pub resolution: usize,
    pub layer: ScatterLayer,
    pub reduction: Reduction,
    pub grid: (usize, usize),
    /// Map indices (into the flattened scattering output) per channel.
    pub groups: Vec<Vec<usize>>,
}

impl StreamLayout {
    pub fn channels(&self) -> usize {
        self.groups.len()
    }

    /// Stream input of one image.
    pub fn gather(&self, features: &ScatterFeatures) -> Result<Array3<f64>> {
        let (h, w) = self.grid;
        let mut out = Array3::zeros((self.groups.len(), h, w));
        for (c, group) in self.groups.iter().enumerate() {
            let mut slot = out.index_axis_mut(ndarray::Axis(0), c);
            for &m in group {
                let map = features
                    .maps
                    .get(m)
                    .ok_or_else(|| ShdlError::Dimension(format!("stream {} needs map {m}", self.name)))?;
                if map.values.dim() != (h, w) {
                    return Err(ShdlError::Dimension(format!("map {m} is not {h}x{w}")));
                }
                slot += &map.values;
            }
            slot /= group.len() as f64;
        }
        Ok(out)
    }
}

/// L1 and L2 streams of every resolution, each reduced until it has at
/// most `max_channels` channels.
pub fn build_stream_layouts(
    layout: &[(PathDescriptor, (usize, usize))],
    resolutions: usize,
    max_channels: usize,
) -> Result<Vec<StreamLayout>> {
    let mut out = Vec::new();
    for r in 0..resolutions {
        for layer in [ScatterLayer::L1, ScatterLayer::L2] {
            let members: Vec<usize> = (0..layout.len())
                .filter(|&i| layout[i].0.resolution == r && layout[i].0.layer == layer)
                .collect();
            if members.is_empty() {
                continue;
            }
            let grid = layout[members[0]].1;
            let mut built = None;
            for red in REDUCTIONS {
                let mut keys: Vec<PathDescriptor> = Vec::new();
                let mut groups: Vec<Vec<usize>> = Vec::new();
                for &i in &members {
                    let k = red.key(&layout[i].0);
                    match keys.iter().position(|q| *q == k) {
                        Some(g) => groups[g].push(i),
                        None => {
                            keys.push(k);
                            groups.push(vec![i]);
                        }
                    }
                }
                if groups.len() <= max_channels {
                    built = Some((red, groups));
                    break;
                }
            }
            let (reduction, groups) = built.ok_or_else(|| {
                ShdlError::Config(format!(
                    "R{}{layer} cannot be reduced to {max_channels} channels",
                    r + 1
                ))
            })?;
            out.push(StreamLayout {
                name: format!("R{}{layer}", r + 1),
                resolution: r,
                layer,
                reduction,
                grid,
                groups,
            });
        }
    }
    Ok(out)
}

/// Header entries for the PCA outputs of `streams`, `counts` channels each.
pub fn pca_header(streams: &[StreamLayout], layer: &str, counts: &[usize]) -> FeatureHeader {
    let mut h = FeatureHeader::default();
    for (s, &k) in streams.iter().zip(counts) {
        for f in 0..k {
            h.push(format!("{}/{layer}/f{}", s.name, f + 1), s.grid.0, s.grid.1);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scatter::{ScatterConfig, Scatterer};
    use crate::tensor::ImageTensor;
    use ndarray::Array3 as A3;

    #[test]
    fn default_streams_fit_the_cap() {
        let sc = Scatterer::new(ScatterConfig::default()).unwrap();
        let layout = sc.layout(3, (32, 32));
        let streams = build_stream_layouts(&layout, 2, 150).unwrap();
        let summary: Vec<(String, usize, Reduction)> =
            streams.iter().map(|s| (s.name.clone(), s.channels(), s.reduction)).collect();
        assert_eq!(
            summary,
            vec![
                ("R1L1".into(), 90, Reduction::None),
                ("R1L2".into(), 60, Reduction::Colour),
                ("R2L1".into(), 72, Reduction::None),
                ("R2L2".into(), 108, Reduction::SecondOrientation),
            ]
        );
        for s in &streams {
            let n: usize = s.groups.iter().map(Vec::len).sum();
            let expect = layout.iter().filter(|(p, _)| p.resolution == s.resolution && p.layer == s.layer).count();
            assert_eq!(n, expect);
        }
    }

    #[test]
    fn gather_averages_group_members() {
        let cfg = ScatterConfig::with_scales(vec![2.0], vec![3]);
        let sc = Scatterer::new(cfg).unwrap();
        let img = ImageTensor::from_array(A3::from_shape_fn((3, 16, 16), |(c, y, x)| ((c + 1) * (x + 2 * y)) as f64 / 50.0));
        let feats = sc.transform(&img).unwrap();
        let layout = sc.layout(3, (16, 16));
        assert_eq!(feats.maps.len(), layout.len());
        for (m, (p, g)) in feats.maps.iter().zip(&layout) {
            assert_eq!(m.path, *p);
            assert_eq!(m.values.dim(), *g);
        }
        let streams = build_stream_layouts(&layout, 1, 20).unwrap();
        let l2 = &streams[1];
        let x = l2.gather(&feats).unwrap();
        let g = &l2.groups[0];
        let manual = g.iter().map(|&i| feats.maps[i].values[[1, 2]]).sum::<f64>() / g.len() as f64;
        assert!((x[[0, 1, 2]] - manual).abs() < 1e-12);
    }

    #[test]
    fn impossible_cap_is_config_error() {
        let sc = Scatterer::new(ScatterConfig::default()).unwrap();
        assert!(matches!(
            build_stream_layouts(&sc.layout(3, (32, 32)), 2, 2),
            Err(ShdlError::Config(_))
        ));
    }
}
