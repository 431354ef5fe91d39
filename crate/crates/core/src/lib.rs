pub mod agreement;
pub mod corpus;
pub mod embed_metrics;
pub mod gbr;
pub mod harness;
pub mod lexical;
pub mod pool_metric;
pub mod seed;
pub mod synthetic;
pub mod vcrscore;
