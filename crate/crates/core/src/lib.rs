//! Document parsing toolkit: page model, reading order, text-spotting codec,
//! evaluation metrics, data-selection planner, staged runtime and assembler.

pub mod api;
pub mod assembler;
pub mod config;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reading_order;
pub mod spotting;
pub mod table;
pub mod uacs;

pub use model::{Category, ContentKind, ContentPayload, LayoutElement, PageDocument, Polygon};
