//! Seeded synthetic sales calls, summaries and toy training tasks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::summarizer::{PairSource, TrainingPair};
use crate::transcript::{SpeakerRole, Transcript};

pub struct Topic {
    pub name: &'static str,
    pub customer: &'static [&'static str],
    pub agent: &'static [&'static str],
    pub summary: &'static str,
}

pub const TOPICS: &[Topic] = &[
    Topic {
        name: "pricing",
        customer: &[
            "How much does the premium plan cost per seat?",
            "The price seems high for our small team.",
            "Is there a discount if we pay for the whole year?",
            "We need the pricing before our budget meeting.",
        ],
        agent: &[
            "The premium plan costs forty dollars per seat each month.",
            "We offer a discount of fifteen percent on annual plans.",
            "I can send you the full price sheet today.",
            "Small teams often start with the basic plan at a lower price.",
        ],
        summary: "The customer asked about pricing and the agent explained the annual discount.",
    },
    Topic {
        name: "billing",
        customer: &[
            "I was charged twice on my last invoice.",
            "The billing page shows a payment I did not make.",
            "Can you fix the double charge on my card?",
            "My invoice total does not match the contract.",
        ],
        agent: &[
            "I see the duplicate charge on your invoice.",
            "I will refund the extra payment to your card.",
            "The refund should appear within five business days.",
            "I corrected the invoice total to match your contract.",
        ],
        summary: "The customer reported a billing error and the agent issued a refund.",
    },
    Topic {
        name: "onboarding",
        customer: &[
            "Our team needs help setting up the new accounts.",
            "How do we import our existing contacts?",
            "The setup guide is confusing for new users.",
            "Can someone train our staff next week?",
        ],
        agent: &[
            "I can schedule an onboarding session for your team.",
            "You can import contacts from a spreadsheet in the settings page.",
            "Our specialist will walk your staff through the setup.",
            "I will email you the training schedule for next week.",
        ],
        summary: "The customer needed onboarding help and the agent scheduled a training session.",
    },
    Topic {
        name: "outage",
        customer: &[
            "The dashboard has been down since this morning.",
            "Our reports are not loading at all.",
            "We cannot log in and our sales team is blocked.",
            "Is the outage affecting every customer?",
        ],
        agent: &[
            "Our engineers are working on the outage right now.",
            "The service should be restored within the hour.",
            "I will credit your account for the downtime.",
            "The outage affects a few regions including yours.",
        ],
        summary: "The customer reported an outage and the agent promised a fix and a credit.",
    },
    Topic {
        name: "renewal",
        customer: &[
            "Our contract ends next month and we are thinking about renewal.",
            "We want to renew but add more seats.",
            "What happens to our data if we do not renew?",
            "Can we lock the current rate for the renewal?",
        ],
        agent: &[
            "I can prepare a renewal quote with the extra seats.",
            "We can keep your current rate if you renew this month.",
            "Your data stays available for thirty days after the contract ends.",
            "I will send the renewal contract for signature.",
        ],
        summary: "The customer discussed the renewal and the agent offered to keep the current rate.",
    },
];

const OPENERS: &[(&str, &str)] = &[
    ("Hello, thanks for calling, how can I help you today?", "Hi, I have a question about my account."),
    ("Good morning, this is the support team.", "Good morning, thanks for taking my call."),
];
const CLOSERS: &[(&str, &str)] = &[
    ("Is there anything else I can help with?", "No, that covers everything, thank you."),
    ("Thanks for your time today.", "Thank you, goodbye."),
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One topic block: `len` turns alternating customer/agent, customer first.
pub fn topic_turns<R: Rng>(rng: &mut R, topic: &Topic, len: usize) -> Vec<(SpeakerRole, String)> {
    (0..len)
        .map(|i| {
            if i % 2 == 0 {
                (SpeakerRole::Customer, topic.customer.choose(rng).expect("non-empty").to_string())
            } else {
                (SpeakerRole::Agent, topic.agent.choose(rng).expect("non-empty").to_string())
            }
        })
        .collect()
}

/// A call of exactly `num_turns` turns (at least 4): greeting, topic blocks
/// of 4 to 8 turns, closing.
pub fn sales_call(seed: u64, num_turns: usize, id: &str) -> Transcript {
    assert!(num_turns >= 4, "a call needs at least 4 turns");
    let mut r = rng(seed);
    let (oa, oc) = *OPENERS.choose(&mut r).expect("non-empty");
    let (ca, cc) = *CLOSERS.choose(&mut r).expect("non-empty");
    let mut turns = vec![(SpeakerRole::Agent, oa.to_string()), (SpeakerRole::Customer, oc.to_string())];
    let mut topics: Vec<&Topic> = TOPICS.iter().collect();
    topics.shuffle(&mut r);
    let mut body = num_turns - 4;
    let mut k = 0;
    while body > 0 {
        let len = if body <= 8 { body } else { r.random_range(4..=8.min(body - 4).max(4)) };
        turns.extend(topic_turns(&mut r, topics[k % topics.len()], len));
        body -= len;
        k += 1;
    }
    turns.push((SpeakerRole::Agent, ca.to_string()));
    turns.push((SpeakerRole::Customer, cc.to_string()));
    Transcript::from_turns(id, turns).expect("synthetic call is valid")
}

/// Topic-block dialogues paired with the topic's reference summary.
pub fn segment_summary_pairs(seed: u64, n: usize, sep: &str) -> Vec<TrainingPair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let topic = TOPICS.choose(&mut r).expect("non-empty");
            let len = r.random_range(2..=6);
            let turns = topic_turns(&mut r, topic, len);
            TrainingPair {
                dialogue: turns.iter().map(|t| t.1.as_str()).collect::<Vec<_>>().join(&format!(" {sep} ")),
                summary: topic.summary.to_string(),
                source: PairSource::Human,
                question: None,
                provenance: None,
                speakers: Some(turns.iter().map(|t| t.0.id()).collect()),
            }
        })
        .collect()
}

const SUBJECTS: &[&str] = &["The customer", "The client", "The caller", "The buyer"];
const VERBS: &[&str] = &["asked about", "complained about", "wanted help with", "called about"];
const OBJECTS: &[&str] = &["pricing", "a refund", "the renewal", "the outage", "onboarding", "the invoice"];
const AGENT_ACTS: &[&str] = &["offered a discount", "issued a refund", "scheduled a call", "sent a quote", "escalated the ticket"];

/// Short well-formed summaries built from templates.
pub fn template_summaries(seed: u64, n: usize) -> Vec<String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            format!(
                "{} {} {} and the agent {}.",
                SUBJECTS.choose(&mut r).expect("non-empty"),
                VERBS.choose(&mut r).expect("non-empty"),
                OBJECTS.choose(&mut r).expect("non-empty"),
                AGENT_ACTS.choose(&mut r).expect("non-empty"),
            )
        })
        .collect()
}

/// Template summaries labeled acceptable, and word-shuffled copies labeled
/// unacceptable, interleaved.
pub fn acceptability_set(seed: u64, n_each: usize) -> Vec<(String, bool)> {
    let mut r = rng(seed ^ 0xacce);
    let good = template_summaries(seed, n_each);
    let mut out = Vec::with_capacity(2 * n_each);
    for g in good {
        let mut words: Vec<&str> = g.trim_end_matches('.').split_whitespace().collect();
        let original = words.clone();
        while words == original {
            words.shuffle(&mut r);
        }
        let bad = format!("{}.", words.join(" "));
        out.push((g, true));
        out.push((bad, false));
    }
    out
}

const COPY_WORDS: &[&str] = &[
    "red", "blue", "green", "late", "early", "price", "order", "refund", "phone", "email", "today", "monday",
];

/// Speaker-sensitive copy task: random short dialogues whose target is the
/// customer's words in order. The first speaker is random, so the customer
/// can only be identified from the speaker ids.
pub fn customer_copy_task(seed: u64, n: usize, sep: &str) -> Vec<TrainingPair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let num_turns = r.random_range(2..=4);
            let first = r.random_range(0..2usize);
            let mut turns = Vec::new();
            let mut speakers = Vec::new();
            let mut target = Vec::new();
            for i in 0..num_turns {
                let speaker = (first + i) % 2;
                let len = r.random_range(1..=2);
                let words: Vec<&str> = (0..len).map(|_| *COPY_WORDS.choose(&mut r).expect("non-empty")).collect();
                if speaker == SpeakerRole::Customer.id() {
                    target.extend(words.iter().copied());
                }
                turns.push(words.join(" "));
                speakers.push(speaker);
            }
            TrainingPair {
                dialogue: turns.join(&format!(" {sep} ")),
                summary: target.join(" "),
                source: PairSource::Human,
                question: None,
                provenance: None,
                speakers: Some(speakers),
            }
        })
        .collect()
}

/// Rendered segment texts for labeling runs.
pub fn segment_texts(seed: u64, n: usize) -> Vec<String> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let topic = TOPICS.choose(&mut r).expect("non-empty");
            let len = r.random_range(2..=5);
            topic_turns(&mut r, topic, len)
                .into_iter()
                .map(|(role, text)| format!("{}: {text}", role.label()))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect()
}
