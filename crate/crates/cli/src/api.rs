//! One-shot API calls against a canister snapshot.

use std::fmt::Write;

use bitsync_core::canister::{ApiError, CanisterState, PageToken, UtxosFilter};
use bitsync_core::NetworkKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApiCommand {
    GetUtxos { address: String, min_confirmations: Option<u64>, page: Option<String> },
    GetBalance { address: String, min_confirmations: Option<u64> },
    SendTransaction { hex: String },
}

/// Runs `cmd` and renders the result as line text. `get_utxos` prints a
/// CSV of `txid,vout,value,height` followed by `tip` and `next_page`
/// lines.
pub fn run_api(canister: &mut CanisterState, network: NetworkKind, cmd: &ApiCommand) -> Result<String, ApiError> {
    let mut out = String::new();
    match cmd {
        ApiCommand::GetUtxos { address, min_confirmations, page } => {
            let filter = match (page, min_confirmations) {
                (Some(token), _) => Some(UtxosFilter::Page(PageToken(token.clone()))),
                (None, Some(c)) => Some(UtxosFilter::MinConfirmations(*c)),
                (None, None) => None,
            };
            let page = canister.get_utxos(address, network, filter)?;
            out.push_str("txid,vout,value,height\n");
            for u in &page.utxos {
                let _ = writeln!(out, "{},{},{},{}", u.outpoint.txid, u.outpoint.vout, u.value, u.height);
            }
            let _ = writeln!(out, "tip {} {}", page.tip_hash, page.tip_height);
            let _ = writeln!(out, "next_page {}", page.next_page.map_or_else(|| "-".to_string(), |t| t.0));
        }
        ApiCommand::GetBalance { address, min_confirmations } => {
            let _ = writeln!(out, "{}", canister.get_balance(address, network, *min_confirmations)?);
        }
        ApiCommand::SendTransaction { hex } => {
            let bytes = hex::decode(hex.trim()).map_err(|e| ApiError::Malformed(bitsync_core::DecodeError::Hex(e.to_string())))?;
            let _ = writeln!(out, "{}", canister.send_transaction(&bytes, network)?);
        }
    }
    Ok(out)
}
