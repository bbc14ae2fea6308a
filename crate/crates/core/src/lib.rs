//! Coalition-structure prediction for concurrent negotiation games: a
//! movement-phase board engine, dialogue corpora, agreement detection,
//! equilibrium-based agreement values and rationalizability scoring.

pub mod adjudicate;
pub mod coalition;
pub mod corpus;
pub mod detection;
pub mod equilibrium;
pub mod error;
pub mod evaluation;
pub mod game;
pub mod http;
pub mod ids;
pub mod intent;
pub mod map;
pub mod mentions;
pub mod order;
pub mod rationalizability;
pub mod seed;
pub mod state;

pub use adjudicate::{adjudicate, adjudicate_detailed, Adjudication};
pub use coalition::{honored, Agreement, AgreementRecord, CoalitionStructure};
pub use corpus::{generate_labeled_corpus, Corpus, CorpusConfig, LabeledTuple, Split};
pub use detection::{detect, LogisticModel, TrainConfig};
pub use equilibrium::{
    conditioned_joint_distribution, regret_matching, train_values, EquilibriumConfig, MatrixGame, ValueFunction,
};
pub use error::{Error, Result};
pub use evaluation::{mrr_at_k, EvalReport, ExperimentConfig};
pub use game::{simulate, Agent, DialogueRound, HoldAgent, Message, Play, PlayRound, TurnContext};
pub use ids::{Power, ProvinceId, UnitId};
pub use intent::{IntentBackend, IntentTable};
pub use map::{load_map, MapGraph, ProvinceKind, UnitKind};
pub use order::{check_legal, legal_orders, JointAction, Order};
pub use rationalizability::{score_agreement_set, ScoredAgreement, ScoringConfig};
pub use state::{reward, GameState, Unit};
