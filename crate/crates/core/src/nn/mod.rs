//! From-scratch recurrent network: layers, exact gradients, Nadam and the
//! training loop.

mod act;
mod model;
mod optim;
mod train;

pub use act::{lecun_normal_init, orthogonal_init, relu, selu, sigmoid, softmax, softmax_rows, Activation, SELU_ALPHA, SELU_LAMBDA};
pub use model::{
    backward, bilstm_forward, cross_entropy, forward, l2_penalty, loss, lstm_cell_forward, predict_tensor, Forward,
    LayerSpec, LstmWeights, Mode, ModelSpec, Param, ParamStore, RunningStats, Tensor3, BN_EPS, BN_MOMENTUM, DEFAULT_CELL_CLIP, DEFAULT_L2,
    PROB_FLOOR,
};
pub use optim::{nadam_step, NadamState, BETA1, BETA2, NADAM_EPS};
pub use train::{
    accuracy_of, argmax, grid_search, predict, train, Dataset, EpochRecord, Grid, GridResult, GridRow, TrainConfig,
    TrainReport, DEFAULT_STRIDE,
};
