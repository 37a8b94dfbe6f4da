pub mod ensembles;
pub mod evaluation;
pub mod experiment;
pub mod indicators;
pub mod labeling;
pub mod market_data;
pub mod matrix;
pub mod par;
pub mod plot;
pub mod resampling;
pub mod seqnet;
pub mod synthetic;
pub mod windowing;
