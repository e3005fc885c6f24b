use std::fs;
use std::path::{Path, PathBuf};

use roomlabel::cooccurrence::{build_proxy_table, count_ground_truth, CooccurrenceTable, CountMode};
use roomlabel::evaluation::{compare_conditions, emit_label_breakdown, evaluate};
use roomlabel::inference::{
    classify_graph, failed_rooms, InferenceOptions, PredictionFile, PredictionHeader, PREDICTIONS_FORMAT,
};
use roomlabel::ingest::{self, house, IngestConfig};
use roomlabel::querygen::{ArticleMode, QueryTemplate};
use roomlabel::scene::SpaceSelector;
use roomlabel::scoring::offline::load_bonus_table;
use roomlabel::scoring::{CachedScorer, OfflineScorer, RemoteConfig, RemoteScorer, SentenceScorer};
use roomlabel::{Error, SceneGraph};
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{
    ArticleArg, BackendArg, CliError, ConvertArgs, CoocArgs, CoocMode, CountArg, EvalArgs, InferArgs, IngestArgs,
    ObjectSpaceArg, ScorerArgs, SpaceArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

fn write_output(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn manifest_comment(out: &Path) -> String {
    format!("# manifest: {}\n", RunManifest::reference_for(out))
}

fn ingest_config(space: &SpaceArgs) -> CliResult<IngestConfig> {
    let mut cfg = IngestConfig::default();
    if let Some(path) = &space.spelling_fixes {
        require_file(path)?;
        cfg.spelling_fixes = ingest::load_spelling_fixes(path)?;
    }
    Ok(cfg)
}

fn selector(space: ObjectSpaceArg) -> SpaceSelector {
    match space {
        ObjectSpaceArg::Fine => SpaceSelector::Fine,
        ObjectSpaceArg::Coarse => SpaceSelector::Coarse,
    }
}

/// Parses and preprocesses a scene file; returns the graph and the name of
/// the selected object space.
fn load_graph(path: &Path, space: &SpaceArgs) -> CliResult<(SceneGraph, String)> {
    require_file(path)?;
    let cfg = ingest_config(space)?;
    let raw = ingest::parse_scene_file(path, &cfg)?;
    let name = raw
        .select_space(&selector(space.object_space))
        .map(|s| s.name.clone())
        .ok_or_else(|| {
            CliError::Data(format!(
                "{}: no {:?} object label space",
                path.display(),
                space.object_space
            ))
        })?;
    let graph = ingest::preprocess(&raw, &cfg, &name)?;
    Ok((graph, name))
}

fn template(article: ArticleArg) -> QueryTemplate {
    QueryTemplate::new(match article {
        ArticleArg::Grammatical => ArticleMode::Grammatical,
        ArticleArg::Literal => ArticleMode::LiteralAnParenthesized,
    })
}

fn build_scorer(args: &ScorerArgs) -> CliResult<Box<dyn SentenceScorer>> {
    if args.max_inflight == 0 {
        return Err(CliError::Usage("--max-inflight must be positive".into()));
    }
    let inner: Box<dyn SentenceScorer> = match args.backend {
        BackendArg::Offline => {
            let bonuses = match &args.bonus_table {
                Some(p) => {
                    require_file(p)?;
                    load_bonus_table(p)?
                }
                None => Vec::new(),
            };
            Box::new(OfflineScorer::new(args.seed, bonuses))
        }
        BackendArg::Remote => {
            let mut cfg = RemoteConfig::from_env()?;
            cfg.max_inflight = args.max_inflight;
            cfg.max_attempts = args.max_attempts.max(1);
            Box::new(RemoteScorer::new(cfg)?)
        }
    };
    Ok(match &args.cache_dir {
        Some(dir) => Box::new(CachedScorer::open(inner, dir)?),
        None => Box::new(CachedScorer::in_memory(inner)),
    })
}

pub fn convert(args: &ConvertArgs) -> CliResult {
    for h in &args.houses {
        require_file(h)?;
    }
    let mut manifest = RunManifest::new(
        "convert",
        json!({ "category_map": args.category_map.as_ref().map(|p| p.display().to_string()) }),
    );
    let mapping = match &args.category_map {
        Some(p) => {
            require_file(p)?;
            manifest.add_input(p)?;
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Some(house::parse_category_mapping(&text, &p.display().to_string())?)
        }
        None => None,
    };
    let mut graphs = Vec::new();
    for h in &args.houses {
        manifest.add_input(h)?;
        let text = fs::read_to_string(h).map_err(|e| CliError::io(h, e))?;
        graphs.push(house::convert_house(&text, &h.display().to_string(), mapping.as_ref())?);
    }
    let graph = house::merge(graphs);
    let text = manifest_comment(&args.out) + &ingest::format::write_scene(&graph);
    write_output(&args.out, &text)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out)?;
    println!(
        "converted {} house(s): {} rooms, {} objects -> {}",
        args.houses.len(),
        graph.rooms.len(),
        graph.objects.len(),
        args.out.display()
    );
    Ok(())
}

pub fn ingest(args: &IngestArgs) -> CliResult {
    let mut manifest = RunManifest::new("ingest", serde_json::to_value(&args.space).expect("args serialize"));
    let (graph, space) = load_graph(&args.scene, &args.space)?;
    manifest.add_input(&args.scene)?;
    if let Some(p) = &args.space.spelling_fixes {
        manifest.add_input(p)?;
    }
    let text = manifest_comment(&args.out) + &ingest::format::write_scene(&graph);
    write_output(&args.out, &text)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out)?;

    println!("rooms: {}", graph.rooms.len());
    println!("objects: {}", graph.objects.len());
    for s in &graph.object_spaces {
        let marker = if s.name == space { " (selected)" } else { "" };
        println!("{}{marker}", ingest::object_space_summary(s));
    }
    println!("room labels:");
    for (label, n) in ingest::room_histogram(&graph) {
        println!("  {label}\t{n}");
    }
    Ok(())
}

pub fn cooc(args: &CoocArgs) -> CliResult {
    let (graph, space) = load_graph(&args.graph, &args.space)?;
    let mut config = json!({
        "cooc": format!("{:?}", args.cooc).to_lowercase(),
        "space": args.space,
    });
    let table = match args.cooc {
        CoocMode::Gt => {
            config["alpha"] = json!(args.alpha);
            config["count"] = json!(format!("{:?}", args.count).to_lowercase());
            let mode = match args.count {
                CountArg::Instances => CountMode::Instances,
                CountArg::Presence => CountMode::Presence,
            };
            count_ground_truth(&graph, &space, args.alpha, mode)?
        }
        CoocMode::Proxy => {
            config["scorer"] = serde_json::to_value(&args.scorer).expect("args serialize");
            let scorer = build_scorer(&args.scorer)?;
            let objects = graph.space(&space).map(|s| s.labels.clone()).unwrap_or_default();
            build_proxy_table(
                &scorer,
                &space,
                &objects,
                &graph.room_space.name,
                &graph.room_space.labels,
                &template(args.scorer.article),
                args.scorer.max_inflight,
            )?
        }
    };
    let mut manifest = RunManifest::new("cooc", config);
    manifest.add_input(&args.graph)?;
    add_scorer_inputs(&mut manifest, &args.scorer, args.cooc == CoocMode::Proxy)?;
    manifest.backend = table.scorer.clone();
    manifest.template = table.template.clone();
    let text = manifest_comment(&args.out) + &table.to_text();
    write_output(&args.out, &text)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out)?;
    println!(
        "{} table over {} object labels x {} room labels -> {}",
        table.provenance,
        table.rows.len(),
        table.room_labels.len(),
        args.out.display()
    );
    Ok(())
}

fn add_scorer_inputs(manifest: &mut RunManifest, args: &ScorerArgs, used: bool) -> CliResult {
    if used {
        if let Some(p) = &args.bonus_table {
            manifest.add_input(p)?;
        }
    }
    Ok(())
}

pub fn infer(args: &InferArgs) -> CliResult {
    if args.k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    require_file(&args.table)?;
    let (graph, space) = load_graph(&args.graph, &args.space)?;
    let table = CooccurrenceTable::load(&args.table)?;
    if table.object_space != space {
        return Err(CliError::Data(format!(
            "table is over object space {:?} but --object-space selects {space:?}",
            table.object_space
        )));
    }
    let scorer = build_scorer(&args.scorer)?;
    let options = InferenceOptions {
        k: args.k,
        template: template(args.scorer.article),
        normalize_by_length: args.length_normalize,
        max_inflight: args.scorer.max_inflight,
    };
    let condition = options.condition(&table, &scorer);
    let outcomes = classify_graph(&graph, &table, &scorer, &options)?;

    let mut manifest = RunManifest::new(
        "infer",
        json!({
            "k": args.k,
            "length_normalize": args.length_normalize,
            "space": args.space,
            "scorer": args.scorer,
        }),
    );
    manifest.add_input(&args.graph)?;
    manifest.add_input(&args.table)?;
    add_scorer_inputs(&mut manifest, &args.scorer, true)?;
    manifest.backend = Some(condition.backend.clone());
    manifest.template = Some(condition.template.clone());

    let file = PredictionFile {
        header: PredictionHeader {
            format: PREDICTIONS_FORMAT.to_string(),
            manifest: Some(RunManifest::reference_for(&args.out)),
            room_space: graph.room_space.name.clone(),
            room_labels: graph.room_space.labels.clone(),
            condition,
        },
        outcomes,
    };
    write_output(&args.out, &file.to_jsonl())?;
    manifest.add_output(&args.out);
    manifest.write(&args.out)?;

    let failed = failed_rooms(&file.outcomes);
    let ok = file.outcomes.len() - failed.len();
    let correct = file
        .outcomes
        .iter()
        .filter_map(|o| o.prediction())
        .filter(|p| p.is_correct())
        .count();
    println!(
        "classified {ok} room(s), {correct} correct, {} failed -> {}",
        failed.len(),
        args.out.display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::RoomsFailed(failed).into())
    }
}

fn report_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".jsonl").unwrap_or(&name).to_string()
}

pub fn eval(args: &EvalArgs) -> CliResult {
    for p in &args.predictions {
        require_file(p)?;
    }
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut manifest = RunManifest::new("eval", json!({ "out_dir": args.out_dir.display().to_string() }));
    let mut reports = Vec::new();
    let mut outputs: Vec<PathBuf> = Vec::new();
    for p in &args.predictions {
        manifest.add_input(p)?;
        let file = PredictionFile::load(p)?;
        let report = evaluate(&file.outcomes, &file.header.room_labels)?;
        let stem = report_stem(p);
        let text = report.to_text();
        print!("== {}\n{text}", p.display());

        let txt = args.out_dir.join(format!("{stem}.report.txt"));
        write_output(&txt, &text)?;
        let json_path = args.out_dir.join(format!("{stem}.report.json"));
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_output(&json_path, &(json + "\n"))?;
        let csv_path = args.out_dir.join(format!("{stem}.breakdown.csv"));
        write_output(&csv_path, &emit_label_breakdown(&report)?)?;
        outputs.extend([txt, json_path, csv_path]);
        reports.push(report);
    }
    let table = compare_conditions(&reports)?;
    let txt = args.out_dir.join("conditions.txt");
    write_output(&txt, &table.to_text())?;
    let json_path = args.out_dir.join("conditions.json");
    let json = serde_json::to_string_pretty(&table).expect("table serializes");
    write_output(&json_path, &(json + "\n"))?;
    print!("== conditions\n{}", table.to_text());
    outputs.extend([txt, json_path]);
    for o in &outputs {
        manifest.add_output(o);
    }
    manifest.write(&args.out_dir.join("eval"))?;
    Ok(())
}
