//! The election block in isolation: score a candidate set against projected
//! samples, pick the winner, and watch the noise controller react to the
//! spread of candidate qualities across rounds.
//!
//! The candidate set here is synthetic (truth plus noisy decoys), so the
//! mechanics are visible without training a generator first.
//!
//! ```bash
//! cargo run --release --example election_walkthrough
//! ```

use radiolam::augment::{augment_with_transmitters, AugmentParams};
use radiolam::election::{election_distance, select_best, update_noise, NoiseCtlState};
use radiolam::generation::CandidateSet;
use radiolam::grid::Map2;
use radiolam::scene::{
    BuildingMask, GridSpec, NormBounds, Sample, SampleSet, TerrainMap, Transmitter,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> radiolam::Result<()> {
    // A free-space world where projections are exact: truth is the
    // superposed power-law field of two known transmitters.
    let grid = GridSpec::default();
    let txs = vec![
        Transmitter { pos: [9.0, 10.0, 2.0], power_dbm: 0.0, gain_const: 0.35 },
        Transmitter { pos: [24.0, 20.0, 2.0], power_dbm: 0.0, gain_const: 0.25 },
    ];
    let field = |x: f64, y: f64, z: f64| {
        radiolam::augment::free_space_predict([x, y, z], &txs, 2.0)
    };
    let target_h = 1;
    let z_t = grid.height_cells(target_h);
    let truth = Map2::from_fn(grid.x_dim, grid.y_dim, |x, y| field(x as f64, y as f64, z_t) as f32);

    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let samples = SampleSet {
        samples: (0..20)
            .map(|_| {
                let (x, y, h) = (rng.gen_range(0..32), rng.gen_range(0..32), rng.gen_range(0..3));
                Sample { x, y, h, rss: field(x as f64, y as f64, grid.height_cells(h)) as f32 }
            })
            .collect(),
        grid: grid.clone(),
    };

    let buildings = BuildingMask::empty(&grid);
    let terrain = TerrainMap::flat(&grid);
    let ctx = radiolam::augment::SceneContext {
        buildings: &buildings,
        terrain: &terrain,
        grid: &grid,
        freq_mhz: 3500.0,
        bounds: NormBounds::default(),
    };
    let params = AugmentParams { hata_enabled: false, ..Default::default() };
    let projected = augment_with_transmitters(&samples, &ctx, target_h, &params, Some(&txs))?;

    // Candidates: the truth buried among noisy decoys of varying quality.
    let m = 8;
    let mut candidates = Vec::new();
    for i in 0..m {
        if i == 5 {
            candidates.push(truth.clone());
            continue;
        }
        let noise = 0.05 + 0.05 * i as f32;
        let mut c = truth.clone();
        for v in c.data_mut() {
            *v = (*v + rng.gen_range(-noise..noise)).clamp(0.0, 1.0);
        }
        candidates.push(c);
    }
    let set = CandidateSet {
        candidates,
        seeds: (0..m as u64).collect(),
        sigma_trace: vec![0.05; m],
    };

    println!("candidate distances against the projected samples:");
    for (i, c) in set.candidates.iter().enumerate() {
        let d = election_distance(c, &projected, &samples)?;
        let tag = if i == 5 { "  <- ground truth" } else { "" };
        println!("  candidate {i}: D = {d:.6}{tag}");
    }
    let (winner, report) = select_best(&set, &projected, &samples)?;
    println!(
        "\nwinner: candidate {} (distance {:.6}, variance of distances {:.6})",
        report.winner_index, report.distances[report.winner_index], report.variance
    );
    assert_eq!(&winner, &truth);

    // The controller: low spread grows the noise (capped), high spread halves it.
    let mut state = NoiseCtlState {
        sigma_t: 0.05,
        delta_sigma: 0.05,
        sigma_max: 0.3,
        var_threshold: report.variance, // calibrate on what we just observed
    };
    println!("\nnoise controller trace:");
    for (round, var) in [(1, 0.2 * report.variance), (2, 0.1 * report.variance), (3, 5.0 * report.variance)] {
        state = update_noise(&state, var);
        println!(
            "  round {round}: observed Var {:10.6} -> sigma {:.3}",
            var, state.sigma_t
        );
    }
    Ok(())
}
