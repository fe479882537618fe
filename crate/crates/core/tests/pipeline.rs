use std::collections::BTreeMap;

use yieldbench::bench::{evaluate_split, feature_selection, ExplainSettings, Subset};
use yieldbench::dataio::{default_schema, generate_synthetic, read_table, FeatureGroup, SynthSpec};
use yieldbench::model::{ModelSpec, TrainedModel};
use yieldbench::tuning::{search, Domain, SearchOptions, SearchSpace};

fn small(weeks: usize, seed: u64) -> yieldbench::dataio::FeatureTable {
    generate_synthetic(&SynthSpec::benchmark(15, 6, weeks, seed)).unwrap()
}

#[test]
fn synthetic_table_survives_csv() {
    let t = small(4, 1);
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = read_table(buf.as_slice(), &default_schema(4)).unwrap();
    assert_eq!(back.region_id, t.region_id);
    assert_eq!(back.year, t.year);
    assert_eq!(back.target, t.target);
    assert_eq!(back.features, t.features);
}

#[test]
fn every_family_round_trips_through_json() {
    let t = small(45, 2);
    for family in yieldbench::model::FAMILIES {
        let mut spec = ModelSpec::default_for(family).unwrap();
        if matches!(family, "cnn" | "dnn") {
            let o: BTreeMap<String, serde_json::Value> =
                [("train.max_epochs".to_string(), 3.into())].into();
            spec = spec.with_overrides(&o).unwrap();
        }
        let out = evaluate_split(family, &spec, &t, 2019, 4).unwrap();
        assert!(out.report.train_years.iter().all(|&y| y < 2019));
        assert_eq!(out.report.metrics.n, 15);
        let back = TrainedModel::from_json(&out.model.to_json().unwrap()).unwrap();
        let test: Vec<usize> = (0..t.n_rows()).filter(|&i| t.year[i] == 2019).collect();
        let again = back.predict_table(&t.select_rows(&test)).unwrap();
        assert_eq!(again, out.predictions, "{family}");
    }
}

#[test]
fn evaluation_is_reproducible() {
    let t = small(45, 3);
    for family in ["forest", "gbt", "knn"] {
        let spec = ModelSpec::default_for(family).unwrap();
        let a = evaluate_split(family, &spec, &t, 2018, 9).unwrap();
        let b = evaluate_split(family, &spec, &t, 2018, 9).unwrap();
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn search_is_reproducible_and_holds_out() {
    let t = small(4, 4);
    let rows: Vec<usize> = (0..t.n_rows()).filter(|&i| t.year[i] < 2019).collect();
    let data = t.select_rows(&rows);
    let space = SearchSpace([("lambda".to_string(), Domain::LogUniform([1e-3, 10.0]))].into());
    let opts = SearchOptions {
        budget: 6,
        folds: 3,
        seed: 5,
        holdout_year: Some(2019),
    };
    let base = ModelSpec::default_for("ridge").unwrap();
    let a = search(&base, &space, &opts, &data).unwrap();
    let b = search(&base, &space, &opts, &data).unwrap();
    assert_eq!(a.best_index, b.best_index);
    for (x, y) in a.trials.iter().zip(&b.trials) {
        assert_eq!((&x.params, &x.fold_rmse), (&y.params, &y.fold_rmse));
    }
    assert!(search(&base, &space, &opts, &t).is_err());
}

#[test]
fn selection_reports_each_subset() {
    let weeks = 4;
    let t = small(weeks, 6);
    let settings = ExplainSettings {
        background: 10,
        ..Default::default()
    };
    let spec = ModelSpec::default_for("ridge").unwrap();
    let subsets = [
        Subset::Top(1.0),
        Subset::Top(0.5),
        Subset::Group(FeatureGroup::Weather),
    ];
    let rep = feature_selection("ridge", &spec, &t, 2019, &subsets, &settings, 1).unwrap();
    let d = t.n_features();
    let got: Vec<(String, usize)> = rep
        .results
        .iter()
        .map(|r| (r.subset.clone(), r.n_features))
        .collect();
    assert_eq!(
        got,
        vec![
            ("full".to_string(), d),
            ("top_50pct".to_string(), d.div_ceil(2)),
            ("weather_only".to_string(), 6 * weeks)
        ]
    );
    assert!(rep
        .ranking
        .entries
        .windows(2)
        .all(|w| w[0].mean_abs_phi >= w[1].mean_abs_phi));
}
