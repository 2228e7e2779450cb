use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Blocks are built per speaker from that speaker's utterances only.
    SpeakerDependent,
    /// All utterances are shuffled together before blocking.
    SpeakerIndependent,
}

/// Blocks over one pool of utterances: the whole corpus, or one speaker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub speaker: Option<usize>,
    /// Disjoint lists of corpus indices.
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSplit {
    pub mode: SplitMode,
    pub seed: u64,
    pub partitions: Vec<Partition>,
}

impl BlockSplit {
    pub fn num_blocks(&self) -> usize {
        self.partitions.first().map_or(0, |p| p.blocks.len())
    }
}

fn shuffle_into_blocks(mut pool: Vec<usize>, num_blocks: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut blocks = vec![Vec::with_capacity(pool.len() / num_blocks + 1); num_blocks];
    for (n, idx) in pool.into_iter().enumerate() {
        blocks[n % num_blocks].push(idx);
    }
    blocks
}

/// Shuffles and deals utterances round-robin into `num_blocks` blocks.
pub fn split_blocks(
    corpus: &Corpus,
    num_blocks: usize,
    mode: SplitMode,
    seed: u64,
) -> Result<BlockSplit> {
    if num_blocks == 0 {
        return Err(Error::Usage("num_blocks must be at least 1".into()));
    }
    let partitions = match mode {
        SplitMode::SpeakerIndependent => {
            if corpus.len() < num_blocks {
                return Err(Error::Usage(format!(
                    "{} utterances cannot fill {num_blocks} blocks",
                    corpus.len()
                )));
            }
            vec![Partition {
                speaker: None,
                blocks: shuffle_into_blocks((0..corpus.len()).collect(), num_blocks, seed),
            }]
        }
        SplitMode::SpeakerDependent => (0..corpus.num_speakers())
            .map(|s| {
                let pool = corpus.speaker_indices(s);
                if pool.len() < num_blocks {
                    return Err(Error::Usage(format!(
                        "speaker {} has {} utterances, fewer than {num_blocks} blocks",
                        corpus.speakers[s],
                        pool.len()
                    )));
                }
                Ok(Partition {
                    speaker: Some(s),
                    blocks: shuffle_into_blocks(pool, num_blocks, derive_seed(seed, &[s as u64])),
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(BlockSplit {
        mode,
        seed,
        partitions,
    })
}
