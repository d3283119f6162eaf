use super::{ExplainContext, Explanation, LocalGame, MaskType};
use crate::error::Result;
use crate::hetgraph::LocalViewSet;

/// Per-view node saliency: the L2 norm over feature dimensions of the
/// gradient of the target's loss on its predicted class.
pub fn grad_explain(ctx: &ExplainContext<'_>, local: &LocalViewSet) -> Result<Explanation> {
    let game = LocalGame::new(ctx, local)?;
    let grads = ctx
        .model
        .grad_wrt_view_features(local, &ctx.attention, game.class)?;
    let mut e = Explanation::zeros(
        "Grad",
        local,
        &ctx.model.view_names,
        MaskType::Node,
        game.class,
        0,
    );
    for (view, g) in e.views.iter_mut().zip(&grads) {
        view.scores = g.row_norms();
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::super::tests::fixture;
    use super::*;
    use crate::predictors::{AttentionOverride, Backbone};

    #[test]
    fn dead_channel_scores_zero() {
        let f = fixture(Backbone::Han, 1);
        let ctx = f.ctx(&AttentionOverride::OneHot(0));
        let e = grad_explain(&ctx, &f.local(4)).unwrap();
        assert!(e.views[1].scores.iter().all(|&s| s == 0.0));
        assert!(e.views[0].scores.iter().all(|&s| s >= 0.0));
        assert!(e.views[0].scores.iter().any(|&s| s > 0.0));
    }

    #[test]
    fn scores_vanish_outside_one_hop() {
        // one encoder layer: only the target and its neighbours matter
        let f = fixture(Backbone::HanGcn, 2);
        let ctx = f.ctx(&AttentionOverride::Learned);
        let local = f.local(0);
        let e = grad_explain(&ctx, &local).unwrap();
        for (vs, lv) in e.views.iter().zip(&local.views) {
            let near = lv.target_neighbors();
            for (i, &s) in vs.scores.iter().enumerate() {
                if i != lv.target && !near.contains(&i) {
                    assert_eq!(s, 0.0);
                }
            }
        }
    }
}
