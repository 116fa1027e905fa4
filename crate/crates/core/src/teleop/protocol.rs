//! JSON wire messages, one object per WebSocket text frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Buttons {
    pub menu: bool,
    pub grip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    Hello {
        arm: String,
        protocol: u32,
    },
    Input {
        seq: u64,
        t_ms: u64,
        pos: [f64; 3],
        /// w, x, y, z
        quat: [f64; 4],
        trigger: f64,
        buttons: Buttons,
    },
    /// Explicit clutch command, equivalent to a menu-button edge when `engaged` differs.
    Clutch {
        seq: u64,
        t_ms: u64,
        engaged: bool,
    },
    /// Explicit stiffness toggle, equivalent to a grip-button edge.
    ModeToggle {
        seq: u64,
        t_ms: u64,
    },
    State {
        t: f64,
        ee_pos: [f64; 3],
        ee_quat: [f64; 4],
        wrench: [f64; 6],
        gripper: f64,
        mode: String,
        haptic: f64,
        clutch: bool,
    },
    Haptic {
        intensity: f64,
    },
    Error {
        code: String,
        message: String,
    },
}

impl WireMessage {
    pub fn parse(text: &str) -> Result<Self> {
        let msg: WireMessage = serde_json::from_str(text)
            .map_err(|e| Error::protocol("malformed", e.to_string()))?;
        msg.check()?;
        Ok(msg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    /// Sequence number and client time for client messages that carry them.
    pub fn seq(&self) -> Option<(u64, u64)> {
        match self {
            WireMessage::Input { seq, t_ms, .. }
            | WireMessage::Clutch { seq, t_ms, .. }
            | WireMessage::ModeToggle { seq, t_ms } => Some((*seq, *t_ms)),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        if let WireMessage::Input {
            pos, quat, trigger, ..
        } = self
        {
            if pos.iter().chain(quat.iter()).any(|v| !v.is_finite()) || !trigger.is_finite() {
                return Err(Error::protocol("malformed", "non-finite pose or trigger"));
            }
            let n = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-3 {
                return Err(Error::protocol("malformed", format!("quaternion norm {n:.4} is not 1")));
            }
        }
        Ok(())
    }

    pub fn error(e: &Error) -> Self {
        let code = match e {
            Error::Protocol { code, .. } => code.clone(),
            _ => "internal".to_string(),
        };
        let message = match e {
            Error::Protocol { message, .. } => message.clone(),
            other => other.to_string(),
        };
        WireMessage::Error { code, message }
    }
}
