//! Software receive and replay chain for BLE advertising and 2-FSK MPDU links.
//!
//! Raw IQ in, decoded packets out; plus a synthetic two-stage link used to
//! measure how loss compounds when captured traffic is re-transmitted.

pub mod advdata;
pub mod ble;
pub mod iqio;
pub mod lab;
pub mod modem;
pub mod mpdu;
pub mod pipeline;

pub use ble::{AdvChannel, AdvPdu, LinkError, ParsedPdu, PduType};
pub use iqio::{IqBuffer, IqError, IqFormat};
pub use lab::{ChannelModel, ExperimentConfig, LabError, LinkStats, Protocol, Recording, ReplayMode, Report};
pub use modem::{BitStream, ModemError, ModemParams};
pub use mpdu::{Mpdu, MpduError};
pub use num_complex::Complex32;
