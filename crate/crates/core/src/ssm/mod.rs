pub mod block;
pub mod scan;

pub use block::{MambaBlock, MambaStack, SsmConfig};
pub use scan::{discretize, selective_scan_backward, selective_scan_chunked, selective_scan_seq, ScanGrads, ScanInputs, ScanState};
