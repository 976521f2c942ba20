//! Tree-search tool-calling agent for question answering over symbolic video memory.
//!
//! The crate is organized around the data flow of one session:
//!
//! - [`memory`] turns perception records into a read-only relational store.
//! - [`backend`] abstracts the chat-completion provider (live, scripted, cassette).
//! - [`toolkit`] holds the tool registry, the command grammar and the SQL sub-agents.
//! - [`planner`] runs the reward-guided tree search over ReAct steps.
//! - [`aggregator`] reduces candidate answers to one.
//! - [`harness`] drives policy ablations on synthetic tasks.
//! - [`cli`] wires everything into the `vidagent` binary.

pub mod aggregator;
pub mod backend;
pub mod cli;
pub mod harness;
pub mod memory;
pub mod planner;
pub mod template;
pub mod toolkit;
