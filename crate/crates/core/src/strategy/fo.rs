//! Full overwrite: data and every parity block are updated in place on the
//! synchronous path.

use super::{data_rmw, scale, Strategy, StrategyError, TickReport, UpdateRequest};
use crate::cluster::{Cluster, NodeId};

/// Per update of L bytes: 1 + m random reads, 1 + m overwrites and m
/// messages of L bytes.
#[derive(Debug, Default)]
pub struct FullOverwrite;

impl FullOverwrite {
    pub fn new() -> Self {
        Self
    }
}

impl Strategy for FullOverwrite {
    fn name(&self) -> &'static str {
        "fo"
    }

    fn handle_update(&mut self, c: &mut Cluster, req: &UpdateRequest) -> Result<(), StrategyError> {
        let delta = data_rmw(c, req.stripe, req.block, req.offset, &req.payload);
        let src = c.node_of(req.stripe, req.block);
        let k = c.ec().k;
        for j in 0..c.ec().m {
            let pd = scale(c.mat(), j, req.block, &delta);
            c.send(src, c.node_of(req.stripe, k + j), delta.len() as u64);
            c.parity_rmw(req.stripe, j, req.offset, &pd);
        }
        Ok(())
    }

    fn background_tick(&mut self, _c: &mut Cluster) -> Result<TickReport, StrategyError> {
        Ok(TickReport::default())
    }

    fn read(&mut self, c: &mut Cluster, stripe: u64, block: usize, offset: u64, len: u64) -> Vec<u8> {
        c.block_read(stripe, block, offset, len)
    }

    fn quiesce(&mut self, _c: &mut Cluster) -> Result<(), StrategyError> {
        Ok(())
    }

    fn on_fail(&mut self, _c: &mut Cluster, _node: NodeId) -> Result<(), StrategyError> {
        Ok(())
    }
}
