//! Fixed inputs shared by the benchmarks.

use mimo_cfo::cfo::{build_schedule, CfoPilotSchedule};
use mimo_cfo::channel::{draw_channel, uplink_rx, TxScaling};
use mimo_cfo::estimation::pilot_transmit_matrix;
use mimo_cfo::{CfoEstimate, CfoMode, RandomSource, ReceivedBlock, SystemConfig};

pub struct CfoFixture {
    pub config: SystemConfig,
    pub schedule: CfoPilotSchedule,
    pub rx: ReceivedBlock,
}

pub struct EstimationFixture {
    pub config: SystemConfig,
    pub cfo: CfoEstimate,
    pub rx: ReceivedBlock,
}

pub fn config(m: usize) -> SystemConfig {
    SystemConfig::reference().with_antennas(m)
}

/// Received CFO-pilot block for the reference link with `m` antennas.
pub fn cfo_fixture(m: usize, seed: u64) -> CfoFixture {
    let config = config(m);
    let schedule = build_schedule(&config);
    let mut rng = RandomSource::new(seed).rng();
    let ch = draw_channel(&config, &mut rng);
    let rx = uplink_rx(&ch, &schedule.transmit_matrix(), 0, TxScaling::AsGiven, &config, &mut rng).unwrap();
    CfoFixture { config, schedule, rx }
}

/// Received channel-estimation pilots after a CFO estimate.
pub fn estimation_fixture(m: usize, seed: u64) -> EstimationFixture {
    let config = config(m);
    let mut rng = RandomSource::new(seed).rng();
    let mut ch = draw_channel(&config, &mut rng);
    let cfo = CfoMode::Estimated.apply(&mut ch, &config, &mut rng).unwrap();
    let rx = uplink_rx(&ch, &pilot_transmit_matrix(&config), 0, TxScaling::AsGiven, &config, &mut rng).unwrap();
    EstimationFixture { config, cfo, rx }
}
