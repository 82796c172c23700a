//! Byte-level fixtures: prompt texts, request digests, seeded selections.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use subjcheck_core::prompting::{render_classification, render_debate, ChatMessage, Role};
use subjcheck_core::{
    cache_key, select_shots, ChatRequest, DebateRole, Label, LabelFraming, LabeledSentence, PromptTemplate,
    RenderedChat, SelectionStrategy, ShotSet,
};

fn sha(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn prompt_file(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts/en").join(format!("{name}.txt"));
    std::fs::read_to_string(path).unwrap()
}

const PINNED: [(&str, &str); 7] = [
    ("simple", "6768fcd969f313d11fdcfb8d6347ab3a865834d5c05335116687617b65512c10"),
    ("extended", "6c7fd30c87b31558b9fe30b6a25360099e950de8e3ba7c30ae3b762a329e9328"),
    ("explain_subjective", "426244c6ffba1bbdba2f82637b18bfaeada51f4bcd29d2aa0fc67d8a9d8cf002"),
    ("explain_objective", "7aba2666fa31c361de6da5a89050b9f411675aea8a85acec8842c3000329f31e"),
    ("explain_not_subjective", "2cd39e895b6450c4cf4eee1633bc0aca1d1f9d864b44ec69523dbb1394a5e884"),
    ("explain_not_objective", "609b14d6e53ba3e33144281761009e792cdf5f382a8343ef26cc9a4d8ced0734"),
    ("judge", "11b697b1c3295911b6376205f2a6f1508695a4fb5ab42d66b6cfc85e27c7da44"),
];

fn rendered_system(name: &str) -> String {
    let target = LabeledSentence::new("t", "The bridge reopened on Monday.", "en", None);
    let chat = match name {
        "simple" => render_classification(&PromptTemplate::simple_en(), &LabelFraming::ExplicitObjSubj, &ShotSet::empty(), &target),
        "extended" => render_classification(&PromptTemplate::extended_en(), &LabelFraming::ExplicitObjSubj, &ShotSet::empty(), &target),
        "judge" => render_debate(DebateRole::Judge, &target, Some(&[(DebateRole::ExplainSubjective, "x".into())])).unwrap(),
        other => {
            let role = DebateRole::ADVOCATES
                .into_iter()
                .find(|r| format!("{r:?}").to_lowercase().replace('_', "") == other.replace('_', ""))
                .unwrap();
            render_debate(role, &target, None).unwrap()
        }
    };
    chat.system().unwrap().to_string()
}

#[test]
fn system_prompts_match_transcribed_fixtures() {
    for (name, digest) in PINNED {
        let rendered = rendered_system(name);
        assert_eq!(rendered, prompt_file(name), "{name}");
        assert_eq!(sha(&rendered), digest, "{name}");
    }
}

#[test]
fn simple_prompt_text() {
    assert_eq!(
        rendered_system("simple"),
        "You are a linguistic expert, able to detect whether a sentence is objective (OBJ) or subjective (SUBJ). Answer only with OBJ or SUBJ."
    );
}

#[test]
fn cache_key_reference_digests() {
    // computed independently with Python's hashlib over the documented layout
    let chat = RenderedChat {
        messages: vec![
            ChatMessage::new(Role::System, "You are a careful annotator."),
            ChatMessage::new(Role::User, "Sentence: The bridge reopened on Monday."),
            ChatMessage::new(Role::Assistant, "OBJ"),
            ChatMessage::new(Role::User, "Sentence: What a disgrace."),
        ],
    };
    let request = ChatRequest { model: "gpt-4o-mini".into(), messages: chat, temperature: 0.0, max_tokens: 256 };
    assert_eq!(cache_key(&request).as_str(), "bccee24b70cc87f18780e1bf7108e55c82510d7e1a4c72b56b383a6d1a13514e");

    let request = ChatRequest {
        model: "gpt-4o-mini".into(),
        messages: RenderedChat { messages: vec![ChatMessage::new(Role::User, "héllo – ünïcode")] },
        temperature: 0.7,
        max_tokens: 16,
    };
    assert_eq!(cache_key(&request).as_str(), "fddb7eab7b2dec992ee1b706aac83e73aca12b3b74edb98fa578a7057e50c959");
}

fn five_five_pool() -> Vec<LabeledSentence> {
    (0..5)
        .flat_map(|i| {
            [
                LabeledSentence::new(format!("o{i}"), format!("objective {i}"), "en", Some(Label::Objective)),
                LabeledSentence::new(format!("s{i}"), format!("subjective {i}"), "en", Some(Label::Subjective)),
            ]
        })
        .collect()
}

/// The documented sampler, written out from its description.
fn documented_pick(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let span = (n - i) as u64;
        let limit = u64::MAX - (u64::MAX % span + 1) % span;
        let draw = loop {
            let x = rng.next_u64();
            if x <= limit {
                break (x % span) as usize;
            }
        };
        idx.swap(i, i + draw);
    }
    idx.truncate(m);
    idx
}

#[test]
fn seeded_random_selection_fixture() {
    let pool = five_five_pool();
    let target = LabeledSentence::new("t", "target", "en", None);
    let shots = select_shots(&SelectionStrategy::Random { seed: 42 }, &pool, None, &target, 4).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let obj = documented_pick(&mut rng, 5, 2);
    let subj = documented_pick(&mut rng, 5, 2);
    let expected = [
        format!("o{}", obj[0]),
        format!("s{}", subj[0]),
        format!("o{}", obj[1]),
        format!("s{}", subj[1]),
    ];
    assert_eq!(shots.ids(), expected);
    assert_eq!(shots.ids(), PINNED_K4_SEED42);
}

const PINNED_K4_SEED42: [&str; 4] = ["o2", "s0", "o1", "s3"];

#[test]
fn six_shot_chat_has_fourteen_messages() {
    let pool = five_five_pool();
    let target = LabeledSentence::new("t", "target", "en", None);
    let shots = select_shots(&SelectionStrategy::Random { seed: 1 }, &pool, None, &target, 6).unwrap();
    let chat = render_classification(&PromptTemplate::extended_en(), &LabelFraming::ExplicitObjSubj, &shots, &target);
    assert_eq!(chat.len(), 14);
    let roles: Vec<Role> = chat.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles[0], Role::System);
    assert!(roles[1..13].chunks(2).all(|p| p == [Role::User, Role::Assistant]));
    assert_eq!(roles[13], Role::User);
}
