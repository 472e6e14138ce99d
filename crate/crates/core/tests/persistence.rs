use rand::RngCore;
use vecgp::engine::{run, GenerationReport, RunConfig, RunState};
use vecgp::persistence::{append_generation_csv, export_image, load_state, read_tensor, save_state, write_tensor};
use vecgp::{DomainSpec, PrimitiveSet, Tensor};

fn config(seed: u64, gens: usize) -> RunConfig {
    RunConfig { seed, generations: gens, domain: DomainSpec::square(32).unwrap(), ..RunConfig::default() }
}

#[test]
fn fifty_generations_of_fifty_give_2500_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("evolution.csv");
    let mut last: Option<RunState> = None;
    let mut appended = 0;
    let mut obs = |s: &RunState, r: &GenerationReport| {
        // generation 0 is the initial population; log the 50 evolved ones
        if r.generation > 0 {
            append_generation_csv(&path, r.generation, &s.population).unwrap();
            appended += 1;
        }
        last = Some(s.clone());
    };
    run(config(5, 50), PrimitiveSet::default(), &mut [&mut obs]).unwrap();
    assert_eq!(appended, 50);

    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["generation", "individual", "fitness", "depth", "nodes"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2500);

    let state = last.unwrap();
    let final_rows: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[0] == "50").collect();
    assert_eq!(final_rows.len(), 50);
    let best_row = final_rows
        .iter()
        .min_by(|a, b| a[2].parse::<f64>().unwrap().total_cmp(&b[2].parse::<f64>().unwrap()))
        .unwrap();
    let logged: f64 = best_row[2].parse().unwrap();
    assert!((logged - state.best_fitness()).abs() <= 1e-7 * state.best_fitness().max(1.0));
    let index: usize = best_row[1].parse().unwrap();
    assert_eq!(best_row[3].parse::<usize>().unwrap(), state.population[index].depth());
    assert_eq!(best_row[4].parse::<usize>().unwrap(), state.population[index].nodes());
}

#[test]
fn state_round_trips_exactly() {
    let (state, _) = run(config(9, 6), PrimitiveSet::default(), &mut []).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.txt");
    save_state(&state, &path).unwrap();
    let back = load_state(&path, &PrimitiveSet::default()).unwrap();
    assert_eq!(back.generation, state.generation);
    assert_eq!(back.config, state.config);
    assert_eq!(back.best, state.best);
    for (a, b) in back.population.iter().zip(&state.population) {
        assert_eq!(a.tree, b.tree);
        assert_eq!(a.fitness.map(f64::to_bits), b.fitness.map(f64::to_bits));
    }
    assert!(back.rng == state.rng);
    let (mut a, mut b) = (back.rng.clone(), state.rng.clone());
    assert_eq!((0..8).map(|_| a.next_u64()).collect::<Vec<_>>(), (0..8).map(|_| b.next_u64()).collect::<Vec<_>>());
}

#[test]
fn gradient_image_maps_the_range_to_bytes() {
    let domain = DomainSpec::with_resolution(vec![101, 7]).unwrap();
    let x = &vecgp::make_coordinate_tensors(&domain).unwrap()[0];
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("g.png");
    export_image(x, &png).unwrap();
    let img = image::open(&png).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (101, 7));
    for row in 0..7 {
        assert_eq!(img.get_pixel(0, row)[0], 0);
        let mid = img.get_pixel(50, row)[0];
        assert!(mid == 127 || mid == 128, "{mid}");
        assert_eq!(img.get_pixel(100, row)[0], 255);
    }
}

#[test]
fn tensor_files_round_trip() {
    let t = Tensor::new(vec![3, 2, 2], (0..12).map(|i| i as f32 * 0.37 - 2.0).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    write_tensor(&t, &path).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);
}
