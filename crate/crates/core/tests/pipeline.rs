use std::collections::BTreeMap;

use mixgop_core::classifier::{classifier_score_all, read_classifier, train_classifier, write_classifier, GopMethod};
use mixgop_core::eval::{evaluate, EvalLevel, ScoreTable};
use mixgop_core::features::{load_feature_set, subsample_per_phoneme, write_feature_set, Split};
use mixgop_core::gmm::{fit_per_phoneme, mixgop_score_all, read_gmm, write_gmm, GmmModel};
use mixgop_core::ood::{build_knn_indexes, fit_per_phoneme_ocsvm, knn_score_all, ocsvm_score_all, OcsvmConfig, OcsvmModels};
use mixgop_core::synth::{planted_ood, PlantedOodConfig};
use mixgop_core::{AdamConfig, GmmTrainConfig};

fn dataset() -> mixgop_core::FeatureSet {
    planted_ood(&PlantedOodConfig { train_per_phoneme: 200, test_utterances: 40, segments_per_utterance: 20, seed: 7, ..Default::default() })
        .unwrap()
}

#[test]
fn mixgop_tracks_planted_severity_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("features.json");
    write_feature_set(&dataset(), &manifest).unwrap();
    let fs = load_feature_set(&manifest).unwrap();

    let train = subsample_per_phoneme(&fs, 512, 0).unwrap();
    let cfg = GmmTrainConfig { n_components: 3, ..Default::default() };
    let fits = fit_per_phoneme(&train, &cfg).unwrap();
    let mut models: BTreeMap<String, GmmModel> = BTreeMap::new();
    for (p, fit) in fits {
        let path = dir.path().join(format!("gmm-{p}.json"));
        write_gmm(&fit.model, &path).unwrap();
        models.insert(p, read_gmm(&path).unwrap());
    }
    let table = mixgop_score_all(&models, &fs, Split::Test).unwrap();

    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let back = ScoreTable::read_csv(csv.as_slice()).unwrap();
    assert_eq!(back.entries(), table.entries());

    let utt = evaluate(&table, &fs, EvalLevel::Utterance).unwrap();
    assert!(utt.kendall_tau < -0.9, "{utt:?}");
    let seg = evaluate(&table, &fs, EvalLevel::Segment).unwrap();
    assert!(seg.kendall_tau < -0.5, "{seg:?}");
}

#[test]
fn baselines_produce_complete_tables() {
    let fs = dataset();
    let n_test = fs.split_rows(Split::Test).len();

    let knn = knn_score_all(&build_knn_indexes(&fs).unwrap(), &fs, Split::Test).unwrap();
    assert_eq!(knn.len(), n_test);
    assert!(evaluate(&knn, &fs, EvalLevel::Utterance).unwrap().kendall_tau < -0.8);

    let svms = fit_per_phoneme_ocsvm(&fs, &OcsvmConfig::default()).unwrap();
    let models = OcsvmModels::PerPhoneme(svms.into_iter().map(|(p, f)| (p, f.model)).collect());
    let osvm = ocsvm_score_all(&models, &fs, Split::Test).unwrap();
    assert_eq!(osvm.method_tags(), vec!["p_osvm"]);
    assert_eq!(osvm.len(), n_test);

    let dir = tempfile::tempdir().unwrap();
    let fit = train_classifier(&fs, &AdamConfig { max_iters: 50, ..Default::default() }).unwrap();
    assert!(fit.losses.last().unwrap() < fit.losses.first().unwrap());
    let path = dir.path().join("clf.json");
    write_classifier(&fit.classifier, &path).unwrap();
    let clf = read_classifier(&path).unwrap();
    for m in GopMethod::ALL {
        let t = classifier_score_all(&clf, &fs, Split::Test, m).unwrap();
        assert_eq!(t.method_tags(), vec![m.tag()]);
        assert_eq!(t.len(), n_test);
    }
}
