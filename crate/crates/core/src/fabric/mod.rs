//! Wire format, switch routing, link model and the discrete-event kernel.

mod kernel;
mod link;
mod packet;
mod switch;

pub use kernel::{Handler, Kernel, Until};
pub use link::{Endpoint, LinkConfig, LinkModel};
pub use packet::{
    DeserializeError, FaultCode, MsgType, RequestId, TraversalPacket, FLAG_DETOUR, HEADER_BYTES, MAGIC, VERSION,
};
pub use switch::{Route, RouteEntry, RouteTable};
