//! Calibration scratch: times a forward pass and runs a reduced benchmark.
use prn_core::benchmark::*;
use prn_core::config::Variant;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_groups: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut spec = BenchmarkSpec::pinned();
    spec.n_recipes = n_groups * 4;
    spec.model.max_epochs = epochs;
    spec.seeds = vec![101];

    let t0 = Instant::now();
    let data = build_benchmark_data(&spec).unwrap();
    println!("data build: {:.1?}; train/val/test = {}/{}/{}",
        t0.elapsed(), data.train.len(), data.val.len(), data.test.len());

    // Time one forward + backward.
    let model = prn_core::model::Model::new(
        { let mut c = spec.model.clone(); c.variant = Variant::Prn; c.seed = 1; c },
        data.vocab.clone()).unwrap();
    let t1 = Instant::now();
    let reps: u32 = 20;
    for i in 0..reps as usize {
        let g = prn_core::graph::Graph::new();
        let (loss, _) = model.loss(&g, &data.train[i % data.train.len()]).unwrap();
        let mut grads = model.store.zero_gradients();
        g.backward(loss, &mut grads);
    }
    println!("fwd+bwd per instance: {:.2?} (params {})", t1.elapsed() / reps, model.parameter_count());

    let only_prn = args.get(3).map(|s| s == "prn").unwrap_or(false);
    let variants: Vec<Variant> = if only_prn { vec![Variant::Prn] }
        else { vec![Variant::Prn, Variant::BidafStaticMemory, Variant::Bidaf] };
    for variant in variants {
        let t2 = Instant::now();
        let (run, model, state) = run_variant(&data, &spec.model, variant, 101).unwrap();
        let train_acc = 100.0 * prn_core::training::dataset_accuracy(&model, &data.train).unwrap();
        println!("{:<22} seed {}: train {:.1}% val {:.2}% test {:.2}% epochs {} ({:.1?})",
            format!("{:?}", variant), run.seed, train_acc, run.val_accuracy, run.test_accuracy, run.epochs, t2.elapsed());
        let losses: Vec<String> = state.history.iter().filter_map(|m| m.loss.map(|l| format!("{l:.4}"))).collect();
        println!("   train losses: {}", losses.join(" "));
        let accs: Vec<String> = state.history.iter().filter_map(|m| m.accuracy.map(|l| format!("{l:.1}"))).collect();
        println!("   val accs:     {}", accs.join(" "));
        if variant == Variant::Prn {
            use prn_core::analysis::snapshot_table;
            use prn_core::entities::{extract_entities, IngredientDictionary};
            let dict = IngredientDictionary::from_entries(
                prn_core::corpus::synthetic::ENTITY_POOL.iter().map(|s| s.to_string())).unwrap();
            let recipes: Vec<_> = data.world.recipes.iter()
                .filter(|r| data.test_recipe_ids.contains(&r.id)).take(60)
                .map(|r| {
                    let ents = extract_entities(r, &dict, 30, None).unwrap();
                    prn_core::model::prepare_recipe(r, &ents, &model.vocab, &model.config)
                }).collect();
            let table = snapshot_table(&model, &recipes, Some(&data.world.ground_truth)).unwrap();
            let probes = sample_arithmetic_probes(&table, 100, 7);
            println!("   arith probes: {} success: {:.2}", probes.len(),
                arithmetic_success_rate(&table, &probes).unwrap());
        }
    }
    // Hasty on test split.
    let hasty = prn_core::evaluation::evaluate_hasty(&data.test_raw, &data.world.features,
        prn_core::evaluation::CoherencePolicy::MaxDistance).unwrap();
    println!("hasty cloze: {:.2}%", hasty.accuracy(prn_core::corpus::Task::Cloze).unwrap());
}
