//! Two-stage multi-decoder pipeline: the first stage is decoded with
//! label-synchronous search, its best token sequence conditions a factory
//! that yields the second-stage decode problem, and the second stage is
//! decoded the same way. Errors carry the stage they arose in.

use crate::hyp::NBestList;
use crate::lattice::PosteriorLattice;
use crate::scorers::PrefixScorer;
use crate::search::{label_sync_search, BeamConfig, SearchError};
use crate::vocab::TokenId;

/// Second-stage decode problem produced from the first stage's best tokens.
pub struct StageTwo {
    pub lattice: PosteriorLattice,
    pub scorer: Box<dyn PrefixScorer>,
}

/// Decode stage one, condition stage two on its top tokens (the searchable
/// intermediate), decode stage two, and return both n-best lists.
pub fn multi_decoder_search<F>(
    lattice: &PosteriorLattice,
    scorer: &dyn PrefixScorer,
    config1: &BeamConfig,
    stage2_factory: F,
    config2: &BeamConfig,
) -> Result<(NBestList, NBestList), SearchError>
where
    F: FnOnce(&[TokenId]) -> Result<StageTwo, SearchError>,
{
    let stage1 = label_sync_search(lattice, scorer, config1).map_err(|e| e.in_stage(1))?;
    let top_tokens: Vec<TokenId> = stage1
        .top()
        .map(|e| e.tokens.clone())
        .ok_or_else(|| SearchError::Config("stage 1 produced no hypotheses".into()).in_stage(1))?;
    let stage2 = stage2_factory(&top_tokens).map_err(|e| e.in_stage(2))?;
    let final_list = label_sync_search(&stage2.lattice, stage2.scorer.as_ref(), config2)
        .map_err(|e| e.in_stage(2))?;
    Ok((stage1, final_list))
}
