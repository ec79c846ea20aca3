//! Lookup tables over the generated kernels.

// unrolled generated code multiplies by literal zeros and ones
#![allow(clippy::needless_range_loop, clippy::erasing_op, clippy::identity_op)]

use super::kernels::*;
use crate::scalar::Scalar;

include!(concat!(env!("OUT_DIR"), "/spmv_dispatch.rs"));
