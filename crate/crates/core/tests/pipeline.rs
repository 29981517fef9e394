use paramequiv::artifact::{export_embedding_input, read_embedding_input, Preamble};
use paramequiv::{
    aux_loss, collect_independent, connected_components, epsilon_filter, evaluate_grid, gram_schmidt,
    random_equivalent, sgd_search, Adjacency, GridSpec, ModelArch, ParamVector, SampleSet, SampleSpec, SearchConfig,
};

fn reference() -> (ModelArch, ParamVector<f64>) {
    (
        ModelArch::relu(&[1, 2, 1]).unwrap(),
        ParamVector::from_f64(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
    )
}

fn samples(count: usize) -> SampleSet<f64> {
    SampleSet::generate(SampleSpec {
        seed: 10,
        count,
        input_dim: 1,
        lo: -1.0,
        hi: 1.0,
    })
    .unwrap()
}

#[test]
fn search_finds_distinct_equivalents_on_default_settings() {
    let (arch, theta_ref) = reference();
    let c = samples(16384);
    let result = sgd_search(&arch, &theta_ref, &c, &SearchConfig::default()).unwrap();
    assert!(!result.found.is_empty(), "no start accepted");
    assert!(result.found.iter().any(|f| f.theta.l2_distance(&theta_ref) > 1e-2));
    for f in &result.found {
        assert!(f.loss < 1e-3);
        assert_eq!(aux_loss(&arch, &theta_ref, &f.theta, &c).unwrap(), f.loss);
        // Moving a found point along known symmetries keeps its loss within 10x.
        for img in random_equivalent(&arch, &f.theta, 5, 4).unwrap() {
            let j = aux_loss(&arch, &theta_ref, &img, &c).unwrap();
            assert!(j <= 10.0 * f.loss.max(1e-30) && j >= f.loss / 10.0, "{j} vs {}", f.loss);
        }
    }
}

#[test]
fn pipeline_on_a_three_dimensional_plane() {
    let (arch, theta_ref) = reference();
    let c = samples(512);
    let cfg = SearchConfig {
        num_starts: 12,
        max_steps: 8000,
        ..SearchConfig::default()
    };
    let result = sgd_search(&arch, &theta_ref, &c, &cfg).unwrap();
    let picked = collect_independent(&theta_ref, &result, 3, 1e-6).unwrap();
    let plane = gram_schmidt(&theta_ref, &picked).unwrap();
    assert_eq!(plane.dim(), 3);
    let spec = GridSpec::new(3, -2.0, 2.0, 20).unwrap();
    let eval = evaluate_grid(&arch, &theta_ref, &plane, &spec, &c).unwrap();
    let eset = epsilon_filter(&eval, 0.1).unwrap();
    assert!(!eset.is_empty());
    let report = connected_components(&eset, Adjacency::Orthogonal);
    assert_eq!(report.components.iter().map(|k| k.size).sum::<usize>(), eset.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    let rows: Vec<(ParamVector<f64>, f64)> = eset
        .member_params()
        .into_iter()
        .zip(eset.members.iter().map(|&k| eval.losses[k]))
        .collect();
    export_embedding_input(&path, &Preamble::new("embedding-input", "h"), 4, &rows).unwrap();
    let back = read_embedding_input(&path).unwrap();
    assert_eq!(back.len(), eset.member_indices().len());
    assert_eq!(back, rows);
}
