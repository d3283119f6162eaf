use std::sync::Arc;

use super::config::{AttentionOverride, PredictorConfig};
use super::model::{cross_entropy_row, EpochRecord, Messages, TrainedPredictor, ViewInput};
use crate::error::{Error, Result};
use crate::hetgraph::TargetData;
use crate::metrics::macro_f1;
use crate::rng::{self, Stream};
use crate::tensor::{Adam, Matrix, Tape};

/// Full-batch training with early stopping on validation loss; the weights
/// of the best validation epoch are restored.
pub fn train(data: &TargetData, config: &PredictorConfig) -> Result<TrainedPredictor> {
    config.validate()?;
    if data.views.is_empty() {
        return Err(Error::Input("no views to train on".into()));
    }
    if data.splits.train.is_empty() || data.splits.val.is_empty() {
        return Err(Error::Input(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let names = data.views.iter().map(|v| v.name.clone()).collect();
    let mut model = TrainedPredictor::init(config, data.features.cols(), data.num_classes, names)?;
    let messages: Vec<Messages> = data
        .views
        .iter()
        .map(|v| Messages::new(v.num_nodes(), v.edges()))
        .collect();
    let features = Arc::clone(&data.features);
    let train_idx = Arc::new(data.splits.train.clone());
    let train_labels = Arc::new(
        data.splits
            .train
            .iter()
            .map(|&i| data.labels[i])
            .collect::<Vec<_>>(),
    );
    let val_labels: Vec<usize> = data.splits.val.iter().map(|&i| data.labels[i]).collect();

    let mut opt = Adam::new(config.learning_rate, config.weight_decay);
    let mut dropout_rng = rng::stream(config.seed, Stream::Dropout, 0);
    let mut best_loss = f64::INFINITY;
    let mut best_weights = model.weights().to_vec();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let params = model.param_vars(&mut tape, true);
        let x = tape.constant(Arc::clone(&features));
        let inputs: Vec<ViewInput<'_>> = messages
            .iter()
            .map(|m| ViewInput {
                messages: m,
                edge_weights: None,
                features: x,
            })
            .collect();
        let (logits, _) = model.forward_tape(
            &mut tape,
            &params,
            &inputs,
            &AttentionOverride::Learned,
            Some(&mut dropout_rng),
        )?;
        let rows = tape.gather_rows(logits, Arc::clone(&train_idx))?;
        let loss = tape.cross_entropy(rows, Arc::clone(&train_labels))?;
        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let shapes: Vec<(usize, usize)> = params.iter().map(|&p| tape.shape(p)).collect();
        let grads = tape.backward(loss)?;
        let mut grads: Vec<Matrix> = params
            .iter()
            .zip(shapes)
            .map(|(&p, s)| grads.get_or_zeros(p, s))
            .collect();
        model.project_gradients(&mut grads);
        opt.step(model.weights_mut().iter_mut().map(Arc::make_mut), &grads)?;

        let eval = model.infer_with(&messages, &features, &AttentionOverride::Learned)?;
        let mut val_loss = 0.0;
        let mut val_pred = Vec::with_capacity(val_labels.len());
        for (&i, &y) in data.splits.val.iter().zip(&val_labels) {
            let row = eval.logits.row(i);
            val_loss += cross_entropy_row(row, y);
            val_pred.push(eval.logits.argmax_row(i));
        }
        val_loss /= val_labels.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1: macro_f1(&val_pred, &val_labels, data.num_classes),
        });
        if val_loss < best_loss {
            best_loss = val_loss;
            best_weights = model.weights().to_vec();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    model.weights_mut().clone_from_slice(&best_weights);
    model.history = history;
    model.best_epoch = best_epoch;
    Ok(model)
}
