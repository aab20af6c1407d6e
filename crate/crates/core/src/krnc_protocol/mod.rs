//! Message-level simulation of the custodial join protocol: institutions
//! join by award, claim weight for their accounts, and accounts at
//! not-yet-joined institutions can be verified remotely through a
//! designated verifier.
//!
//! Signatures and encryption are mocked (see [`crypto::MockScheme`]); the
//! state machine only relies on the [`crypto::SignatureScheme`] trait.

pub mod actors;
pub mod crypto;
pub mod invariants;
pub mod message;
pub mod script;
pub mod state;

pub use actors::{AccessMethod, BalanceDataSource, LedgerSource, Simulation, SimulationSetup, VerifierBehavior};
pub use crypto::{Ciphertext, CryptoError, MockScheme, PublicKey, SecretKey, SignatureScheme, Tag};
pub use invariants::{check_invariants, InvariantCheck, InvariantReport};
pub use message::{AccountKey, Caps, Destination, Dispute, Envelope, Opcode, PairCap, Payload, Signature, Signer, Terms};
pub use state::{LedgerContext, ProtocolConfig, ProtocolState};

use crate::fiat_ledger::{AccountId, InstitutionId, LedgerError, Slot};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("signature does not verify or signer is not the expected key")]
    SignatureMismatch,
    #[error("sender is not authorized for this message")]
    Unauthorized,
    #[error("a second GEN message")]
    DuplicateGenesis,
    #[error("message already in the log")]
    DuplicateMessage,
    #[error("slot {got} precedes current slot {current}")]
    SlotRegression { current: Slot, got: Slot },
    #[error("invalid terms: {0}")]
    InvalidTerms(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("{0} already holds institutional authority")]
    AlreadyInstitutional(InstitutionId),
    #[error("{0} has not joined")]
    NotInstitutional(InstitutionId),
    #[error("request already outstanding")]
    DuplicateRequest,
    #[error("join deadline {deadline} passed at slot {slot}")]
    DeadlinePassed { deadline: Slot, slot: Slot },
    #[error("{required} cosignatures required, {got} valid")]
    InsufficientCosigners { required: usize, got: usize },
    #[error("{0} already claimed")]
    DoubleClaim(InstitutionId),
    #[error("mint shut-off {shutoff} passed at slot {slot}")]
    PostShutoff { shutoff: Slot, slot: Slot },
    #[error("{0} must attest to remote issuance before claiming")]
    AttestationRequired(InstitutionId),
    #[error("claimed weight {claimed} but expected {expected}")]
    WeightMismatch { claimed: f64, expected: f64 },
    #[error("cap exceeded: {0}")]
    CapExceeded(String),
    #[error("no remote verifier configured")]
    NoRemoteVerifier,
    #[error("{0} has already joined")]
    TargetAlreadyJoined(InstitutionId),
    #[error("accounts belong to different identities")]
    IdentityMismatch,
    #[error("account {0} already verified")]
    DuplicateVerification(AccountId),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("presented factors share nothing with the account key")]
    NoFactorOverlap,
    #[error("account {0} already settled")]
    AlreadySettled(AccountId),
    #[error("no pending request for account {0}")]
    NoPendingRequest(AccountId),
    #[error("claim {claimed} does not exceed actual {actual}")]
    NBEInvalid { claimed: f64, actual: f64 },
    #[error("no provisional key for this institution")]
    MissingProvisionalKey,
    #[error("{0} has provisional requests not yet forwarded")]
    PendingRequests(InstitutionId),
    #[error("IRV {0} does not match recomputation")]
    RecomputationMismatch(Tag),
    #[error("invalid dispute: {0}")]
    InvalidDispute(String),
    #[error("insufficient balance: have {available}, need {requested}")]
    InsufficientBalance { available: f64, requested: f64 },
    #[error("recipient key is not registered")]
    UnknownRecipientKey,
    #[error("no debited transfer z={0} matches")]
    UnknownTransfer(u64),
    #[error("crypto: {0}")]
    Crypto(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[cfg(test)]
mod tests;
