use core::fmt;

/// Errors surfaced by the heap and its backends.
///
/// The pointer-validation variants (`ForeignPointer`, `DoubleFree`,
/// `HeapCorruption`, `OwnershipViolation`) are only produced when the heap
/// runs with checking enabled; unchecked heaps treat those situations as
/// undefined behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocError {
    /// The backend refused to reserve or commit memory.
    OutOfMemory,
    /// The request exceeds [`MAX_ALLOC_SIZE`](crate::size_classes::MAX_ALLOC_SIZE).
    AllocTooLarge { size: usize },
    /// `count * size` overflowed in a zeroed allocation.
    ArithmeticOverflow,
    /// The address does not belong to any live segment of this heap.
    ForeignPointer { addr: usize },
    /// The block is already free.
    DoubleFree { addr: usize },
    /// Metadata or block-address arithmetic is inconsistent.
    HeapCorruption { addr: usize },
    /// A documented precondition was broken by the caller.
    ContractViolation(&'static str),
    /// The heap was entered from a thread other than the one that created it.
    OwnershipViolation,
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocError::OutOfMemory => f.write_str("out of memory"),
            AllocError::AllocTooLarge { size } => {
                write!(f, "allocation of {size} bytes exceeds the address-space cap")
            }
            AllocError::ArithmeticOverflow => f.write_str("allocation size overflowed"),
            AllocError::ForeignPointer { addr } => {
                write!(f, "address {addr:#x} is not owned by this heap")
            }
            AllocError::DoubleFree { addr } => write!(f, "double free of {addr:#x}"),
            AllocError::HeapCorruption { addr } => write!(f, "heap corruption at {addr:#x}"),
            AllocError::ContractViolation(what) => write!(f, "contract violation: {what}"),
            AllocError::OwnershipViolation => {
                f.write_str("heap used from a thread other than its owner")
            }
        }
    }
}

impl core::error::Error for AllocError {}
