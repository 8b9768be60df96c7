pub mod cuckoo;
pub mod hash;
pub mod multimap;
pub mod multiqueue;
pub mod pagestore;
pub mod harness;
