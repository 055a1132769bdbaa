//! Train → assign → split, shared by the sweep and the command line.

use crate::contrastive::{train, TrainConfig, TrainedModel};
use crate::datagen::Datastream;
use crate::disentangle::{assign_all, embed_all, split_assignments, AssignmentMatrix, SplitReport, Threshold};
use crate::encoder::Embedding;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: TrainedModel,
    pub assignments: AssignmentMatrix,
    pub split: SplitReport,
    /// Online-encoder embeddings of the clean records.
    pub embeddings: Vec<Embedding>,
}

pub fn run_pipeline(data: &Datastream, train_cfg: &TrainConfig, threshold: Threshold) -> Result<PipelineOutput> {
    let model = train(data, train_cfg)?;
    let assignments = assign_all(data, &model.state.online, &model.bank, train_cfg.tau)?;
    let split = split_assignments(&assignments, threshold)?;
    let embeddings = embed_all(data, &model.state.online)?;
    Ok(PipelineOutput {
        model,
        assignments,
        split,
        embeddings,
    })
}
