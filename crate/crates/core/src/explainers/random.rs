use rand::Rng as _;

use super::{Explanation, MaskType};
use crate::error::Result;
use crate::hetgraph::LocalViewSet;
use crate::rng::{self, Stream};

/// I.i.d. uniform `[0, 1)` scores on the support of `mask_type`, seeded by
/// `(seed, target)`.
pub fn random_baseline(
    local: &LocalViewSet,
    view_names: &[String],
    mask_type: MaskType,
    seed: u64,
) -> Result<Explanation> {
    local.check()?;
    let name = match mask_type {
        MaskType::Node => "RandomNodeMask",
        MaskType::Edge => "RandomEdgeMask",
        MaskType::EdgeFeature => "RandomEdgeAndFeatureMask",
    };
    let mut rng = rng::stream(seed, Stream::Baseline, local.target as u64);
    let mut e = Explanation::zeros(name, local, view_names, mask_type, 0, seed);
    for view in e.views.iter_mut() {
        for s in view.scores.iter_mut() {
            *s = rng.random::<f64>();
        }
    }
    if mask_type == MaskType::EdgeFeature {
        let d = local.views.first().map_or(0, |v| v.features.cols());
        e.feature_mask = Some((0..d).map(|_| rng.random::<f64>()).collect());
    }
    Ok(e)
}
