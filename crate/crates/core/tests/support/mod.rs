#![allow(dead_code)]

pub mod cron_gen;
pub mod cron_oracle;
