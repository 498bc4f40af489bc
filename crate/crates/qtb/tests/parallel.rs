//! Rayon drivers return exactly what the serial code returns.

use qtb::parallel;
use qtb_core::analysis::PortPair;
use qtb_core::coincidence::{count_triples, histogram_delays, Gate};
use qtb_core::simulator::{ExperimentConfig, RunKind, Simulation};
use qtb_core::tags::channel;
use qtb_core::tomography::{monte_carlo_uncertainty, phi_plus};

fn simulation(duration: f64) -> Simulation {
    let mut cfg = ExperimentConfig::fixture();
    cfg.duration_s = duration;
    Simulation::new(&cfg, RunKind::Interference).unwrap()
}

#[test]
fn simulation_is_independent_of_the_worker_count() {
    // several segments, so the merge sees segment boundaries
    let sim = simulation(0.02);
    assert!(sim.segment_count() > 1);
    let serial = sim.run().unwrap();
    for threads in [1, 3, 8] {
        assert_eq!(parallel::simulate(&sim, &parallel::pool(Some(threads))).unwrap(), serial, "{threads} threads");
    }
}

#[test]
fn counting_is_independent_of_the_worker_count() {
    let (stream, _) = simulation(0.01).run().unwrap();
    let clock = stream.require(channel::CLOCK).unwrap();
    let gates = [Gate::new(2350, 1000).unwrap(), Gate::new(2350, 400).unwrap(), Gate::new(1000, 200).unwrap()];
    for threads in [1, 4, 7] {
        let pool = parallel::pool(Some(threads));
        for port in PortPair::ALL {
            let (a, b) = port.channels();
            let (ta, tb) = (stream.require(a).unwrap(), stream.require(b).unwrap());
            assert_eq!(
                parallel::histogram(ta, tb, 50, 3200, &pool).unwrap(),
                histogram_delays(ta, tb, 50, 3200).unwrap()
            );
            for g in gates {
                assert_eq!(parallel::triples(clock, ta, tb, g, g, &pool), count_triples(clock, ta, tb, g, g));
            }
        }
    }
}

#[test]
fn monte_carlo_matches_the_serial_loop() {
    let records = qtb::fixtures::tomography_counts();
    let serial = monte_carlo_uncertainty(&records, &phi_plus(), 12, 5).unwrap();
    let par = parallel::monte_carlo(&records, &phi_plus(), 12, 5, &parallel::pool(Some(4))).unwrap();
    assert_eq!(par.values, serial.values);
    assert_eq!(par.std, serial.std);
}
