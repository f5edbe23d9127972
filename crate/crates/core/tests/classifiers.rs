use std::collections::BTreeMap;
use std::sync::OnceLock;

use iacd_core::classifiers::{
    decisions, diagnose, diagnose_features, evaluate, train_bundle, train_cfd, train_lpd, ClassifierBundle,
    ClassifierError, LinkStatus, ModuleConfig, Overall, TrainConfig,
};
use iacd_core::preprocess::fit_scaler;
use iacd_core::signature::{assemble_database, ClassLabel, Signature, SignatureDatabase};
use iacd_core::svm::KernelSpec;
use iacd_core::synth::{
    generate_databases, preset, simulate_connection, CcProfile, ClientConfig, LinkConfig, DEFAULT_TRANSFER_SIZE, MSS,
    PRESET_SMALL,
};

struct Fixture {
    train: SignatureDatabase,
    bundle: ClassifierBundle,
}

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::new(3);
    cfg.lpd.sizes = vec![10, 25];
    cfg
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut m = preset(PRESET_SMALL, 11).unwrap();
        for s in &mut m.scenarios {
            if s.corpus == "train_cfd" {
                s.samples = 11;
            }
        }
        let dbs = generate_databases(&m).unwrap();
        let train = SignatureDatabase::merge(dbs.into_values().collect()).unwrap();
        let bundle = train_bundle(&train, &small_config()).unwrap();
        Fixture { train, bundle }
    })
}

fn pair(
    link: LinkConfig,
    client: ClientConfig,
    seed: u64,
) -> (iacd_core::trace::TraceFile, iacd_core::trace::TraceFile) {
    let out = simulate_connection(&link, &client, DEFAULT_TRANSFER_SIZE, seed).unwrap();
    (out.client, out.server)
}

#[test]
fn bundle_shape_and_default_module_sizes() {
    let b = &fixture().bundle;
    let qs: Vec<usize> = b.cf_modules.iter().map(|m| m.model.q()).collect();
    assert_eq!(qs, vec![12, 32, 24, 16]);
    let kernels: Vec<String> = b.cf_modules.iter().map(|m| m.model.svm.kernel.to_string()).collect();
    assert_eq!(kernels[0], "linear");
    assert!(kernels[1].starts_with("rbf:"));
    assert_eq!(kernels[2], "poly3");
    assert!(kernels[3].starts_with("rbf:"));
    assert!([10, 25].contains(&b.lpd.q()));
    for m in std::iter::once(&b.lpd).chain(b.cf_modules.iter().map(|m| &m.model)) {
        assert!(m.selected_indices.iter().all(|j| b.scaler.retained_indices.contains(j)));
    }
}

#[test]
fn bundle_json_round_trip() {
    let b = &fixture().bundle;
    let text = b.to_json();
    let back = ClassifierBundle::from_json(&text).unwrap();
    assert_eq!(&back, b);
    assert_eq!(back.to_json(), text);
    let broken = text.replacen("iacd-bundle", "other", 1);
    assert!(matches!(
        ClassifierBundle::from_json(&broken),
        Err(ClassifierError::Bundle(_))
    ));
}

#[test]
fn self_evaluation_is_perfect() {
    let f = fixture();
    let m = evaluate(&f.bundle, &f.train).unwrap();
    for c in &m.classes {
        assert_eq!(c.accuracy, 1.0, "{} {}/{}", c.name, c.correct, c.samples);
    }
    assert_eq!(m.healthy_accuracy, Some(1.0));
}

#[test]
fn metrics_match_brute_force_recount() {
    let f = fixture();
    let mut m2 = preset(PRESET_SMALL, 999).unwrap();
    for s in &mut m2.scenarios {
        s.seed ^= 0xABCD;
    }
    let dbs = generate_databases(&m2).unwrap();
    let held = SignatureDatabase::merge(dbs.into_values().collect()).unwrap();
    let metrics = evaluate(&f.bundle, &held).unwrap();
    let raw = decisions(&f.bundle, &held).unwrap();

    let modules: Vec<ClassLabel> = f.bundle.cf_modules.iter().map(|m| m.fault_class).collect();
    let mut expected: BTreeMap<ClassLabel, (usize, usize)> = BTreeMap::new();
    for d in &raw {
        let fired = |c: ClassLabel| d.modules[modules.iter().position(|m| *m == c).unwrap()] >= 0.0;
        let ok = match d.label {
            ClassLabel::LinkFaulty => d.lpd >= 0.0,
            ClassLabel::LinkHealthy => d.lpd < 0.0,
            ClassLabel::Cf(0) => d.modules.iter().all(|v| *v < 0.0),
            ClassLabel::Cf(5) => fired(ClassLabel::Cf(3)) && fired(ClassLabel::Cf(4)),
            c => fired(c),
        };
        let e = expected.entry(d.label).or_default();
        e.0 += 1;
        e.1 += ok as usize;
    }
    for c in &metrics.classes {
        assert_eq!((c.samples, c.correct), expected[&c.label], "{}", c.label);
    }
    for (i, mm) in metrics.modules.iter().enumerate() {
        let fp = raw
            .iter()
            .filter(|d| d.label == ClassLabel::Cf(0) && d.modules[i] >= 0.0)
            .count();
        let tp = raw
            .iter()
            .filter(|d| d.label == mm.fault_class && d.modules[i] >= 0.0)
            .count();
        assert_eq!((mm.confusion.fp, mm.confusion.tp), (fp, tp));
    }
    let csv = metrics.accuracy_csv();
    assert_eq!(csv.lines().count(), metrics.classes.len() + 1);
    assert!(metrics
        .confusion_csv()
        .starts_with("label,samples,LPD_FAULTY,SACK,DSACK,RBuf,WBuf,NONE\n"));
}

#[test]
fn diagnose_healthy_combined_and_lossy_pairs() {
    let b = &fixture().bundle;
    let (c, s) = pair(LinkConfig::healthy(), ClientConfig::healthy(CcProfile::AimdStd), 4242);
    let r = diagnose(b, &c, &s, false).unwrap();
    assert_eq!(r.link_status, LinkStatus::Healthy);
    assert_eq!(r.overall, Overall::ClientHealthy);
    assert_eq!(r.summary(), "CLIENT_HEALTHY");

    let mut rw = ClientConfig::healthy(CcProfile::AimdStd);
    rw.read_buffer = 8 * MSS;
    rw.write_buffer = 8 * MSS;
    let (c, s) = pair(LinkConfig::healthy(), rw, 4243);
    let r = diagnose(b, &c, &s, false).unwrap();
    // The D-SACK module may co-fire: a capped window never overflows the queue, so no D-SACK blocks appear.
    let Overall::ClientFaults(faults) = &r.overall else {
        panic!("{}", r.summary())
    };
    assert!(
        faults.contains(&ClassLabel::Cf(3)) && faults.contains(&ClassLabel::Cf(4)),
        "{}",
        r.summary()
    );
    assert!(faults.iter().all(|f| [2, 3, 4].map(ClassLabel::Cf).contains(f)));
    assert!(r.summary().starts_with("CLIENT_FAULTS ") && r.summary().ends_with("RBuf,WBuf"));

    let (c, s) = pair(
        LinkConfig::healthy().with_loss(0.05),
        ClientConfig::healthy(CcProfile::AimdStd),
        4244,
    );
    let r = diagnose(b, &c, &s, false).unwrap();
    assert_eq!(r.overall, Overall::LinkProblem);
    assert!(r.modules.is_empty());
    let both = diagnose(b, &c, &s, true).unwrap();
    assert_eq!(both.modules.len(), 4);
    assert_eq!(both.link_decision, r.link_decision);
    assert_eq!(diagnose(b, &c, &s, true).unwrap(), both);
}

#[test]
fn report_consistency_on_corpus() {
    let f = fixture();
    for sig in f.train.signatures() {
        let r = diagnose_features(&f.bundle, &sig.features, true).unwrap();
        let healthy = r.link_status == LinkStatus::Healthy && r.client_faults.is_empty();
        assert_eq!(r.overall == Overall::ClientHealthy, healthy);
        if r.client_faults.is_empty() {
            assert!(matches!(r.overall, Overall::LinkProblem | Overall::ClientHealthy));
        }
    }
}

#[test]
fn cf_training_needs_healthy_baseline() {
    let f = fixture();
    let no_healthy = f.train.filter(|l| l != ClassLabel::Cf(0)).unwrap();
    let scaler = fit_scaler(&no_healthy).unwrap();
    assert!(matches!(
        train_cfd(&no_healthy, &scaler, &small_config()),
        Err(ClassifierError::NoHealthyBaseline)
    ));
    let mut cfg = small_config();
    cfg.fault_classes = vec![1, 7];
    let scaler = fit_scaler(&f.train).unwrap();
    assert!(matches!(
        train_cfd(&f.train, &scaler, &cfg),
        Err(ClassifierError::MissingClass(ClassLabel::Cf(7)))
    ));
}

#[test]
fn module_subsets_exclude_other_classes() {
    let f = fixture();
    let scaler = fit_scaler(&f.train).unwrap();
    let mut cfg = small_config();
    cfg.fault_classes = vec![1];
    let alone = train_cfd(&f.train, &scaler, &cfg).unwrap();
    // Relabelling cf_2 samples as unrelated classes must not change module 1.
    let relabelled: Vec<Signature> = f
        .train
        .signatures()
        .iter()
        .cloned()
        .map(|mut s| {
            if s.label == ClassLabel::Cf(2) {
                s.label = ClassLabel::Cf(9);
            }
            s
        })
        .collect();
    let db = assemble_database(relabelled).unwrap();
    let again = train_cfd(&db, &scaler, &cfg).unwrap();
    assert_eq!(alone, again);
    // Adding modules leaves existing ones untouched.
    cfg.fault_classes = vec![1, 3];
    let more = train_cfd(&f.train, &scaler, &cfg).unwrap();
    assert_eq!(more[0], alone[0]);
}

#[test]
fn swapped_link_labels_negate_decisions() {
    let f = fixture();
    let link = f.train.filter(|l| l.is_link()).unwrap();
    let swapped = assemble_database(
        link.signatures()
            .iter()
            .cloned()
            .map(|mut s| {
                s.label = if s.label == ClassLabel::LinkFaulty {
                    ClassLabel::LinkHealthy
                } else {
                    ClassLabel::LinkFaulty
                };
                s
            })
            .collect(),
    )
    .unwrap();
    let scaler = fit_scaler(&link).unwrap();
    let mut cfg = small_config();
    cfg.lpd = ModuleConfig::new(KernelSpec::poly(2), &[10]);
    cfg.c_grid = vec![1.0];
    cfg.tol = 1e-9;
    let a = train_lpd(&link, &scaler, &cfg).unwrap();
    let b = train_lpd(&swapped, &scaler, &cfg).unwrap();
    assert_eq!(a.selected_indices, b.selected_indices);
    for s in f.train.signatures().iter().take(20) {
        let x = iacd_core::preprocess::apply_scaler(&s.features, &scaler).unwrap();
        let proj = |m: &iacd_core::classifiers::BinaryModel| -> Vec<f64> {
            m.selected_indices
                .iter()
                .map(|&j| x[scaler.position(j).unwrap()])
                .collect()
        };
        let da = a.svm.decision_value(&proj(&a)).unwrap();
        let db = b.svm.decision_value(&proj(&b)).unwrap();
        assert!((da + db).abs() < 1e-6 * (1.0 + da.abs()), "{da} vs {db}");
    }
}

#[test]
fn two_sample_lpd_separates_itself() {
    let (c1, s1) = pair(LinkConfig::healthy(), ClientConfig::healthy(CcProfile::AimdStd), 1);
    let (c2, s2) = pair(
        LinkConfig::healthy().with_loss(0.08),
        ClientConfig::healthy(CcProfile::AimdStd),
        2,
    );
    let db = assemble_database(vec![
        iacd_core::signature::build_signature(&c1, &s1, ClassLabel::LinkHealthy).unwrap(),
        iacd_core::signature::build_signature(&c2, &s2, ClassLabel::LinkFaulty).unwrap(),
    ])
    .unwrap();
    let scaler = fit_scaler(&db).unwrap();
    let mut cfg = small_config();
    cfg.lpd.sizes = vec![5];
    let model = train_lpd(&db, &scaler, &cfg).unwrap();
    assert_eq!(model.q(), 5);
    assert_eq!(model.selection.k_folds, 1);
    for s in db.signatures() {
        let x = iacd_core::preprocess::apply_scaler(&s.features, &scaler).unwrap();
        let cols: Vec<f64> = model
            .selected_indices
            .iter()
            .map(|&j| x[scaler.position(j).unwrap()])
            .collect();
        let d = model.svm.decision_value(&cols).unwrap();
        assert_eq!(d >= 0.0, s.label == ClassLabel::LinkFaulty, "{d}");
    }
}
