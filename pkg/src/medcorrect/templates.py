"""Canonical prompt text blocks.

Every user-visible prompt is assembled from the constants below and nothing
else, so a change here is a change to model behavior. Tests pin the
assembled prompts byte-for-byte against golden files; bump TEMPLATE_VERSION
whenever any constant changes.
"""

TEMPLATE_VERSION = "1"

# Role noun phrases for the system prompt. None drops the role clause.
ROLE_PHRASES = {
    "clinician_assistant": "a clinician assistant",
    "none": None,
    "assistant": "an assistant",
    "medical_student": "a medical student",
    "nurse": "a nurse",
    "clinical_note_verificator": "a clinical note verificator",
    "clinician": "a clinician",
}

SYSTEM_PROMPT = (
    "You are {role_clause}tasked with reviewing clinical texts that have been "
    "corrupted by an evil third party. Each clinical text may contain either "
    "one perturbed sentence with clinical or factual inaccuracies, or no "
    "errors at all. Your objective is to help the clinician in identifying "
    "any perturbed sentence and provide a correction. Please respond in JSON "
    "format with the following structure:"
    "\n\n"
    "- 'reason': Describe the reasoning behind identifying a specific "
    "sentence as incorrect or all clinical text as correct.\n"
    "- 'incorrect_sentence_id': If you identify an incorrect sentence, "
    "provide its ID here. If all sentences are correct, respond with -1.\n"
    "- 'correction': If an incorrect sentence is identified, provide a "
    "corrected sentence or an explanation of the inaccuracy. If all "
    "sentences are correct, respond with 'NA'."
    "\n\n"
    "When evaluating the text, focus specifically on clinical or factual "
    "inaccuracies. This could include incorrect medical information, factual "
    "errors related to patient care, or erroneous data interpretations. Your "
    "detailed assessment and correction are critical for ensuring the "
    "reliability and accuracy of our clinical documentation. You have to be "
    "more action-oriented, don't suggest planning, discussion, or something "
    "that is not action-oriented."
)

CLINICAL_TEXT_HEADER = "Clinical text:"

TASK_INSTRUCTION = (
    "Task: Identify 1 incorrect sentence in the clinical text, or confirm if "
    "all sentences are correct. If there is 1 incorrect sentence, how would "
    "you fix it?"
)

HINT_SUFFIX = " Follow the hints below if you see fit"

HINT_HEADER = "Hint:"

TYPE_HINT = (
    "Pay special attention to biomedical entities such as chief complaints, "
    "medical exams, diagnoses, and treatments. The mistake often lies within "
    "these areas."
)

SPAN_HINT = (
    "The clinician said that you MAY want to pay attention to the mention of "
    "'{span}'. If you believe that the mention is incorrect, ONLY SWAP this "
    "mention with something more probable. DO NOT MODIFY the sentence in any "
    "other way."
)

COT_TRIGGER = "Let's think step by step"

ANSWER_CUE = "Answer:"

BLANK_PLACEHOLDER = "<BLANK>"

MCQ_JOB_HEADER = (
    "Your job is to review a clinical note that potentially contains a "
    "medical error."
)

MCQ_OPTION_QUESTION = (
    "In the following clinical note, what should the <BLANK> in the sentence "
    '"{sentence}" be replaced with if "{span}" is incorrect? Do not answer '
    'with "{span}" or its medical synonyms in your answer. Output your '
    "response in JSON format, with keys {keys}."
)

MCQ_ANSWER_QUESTION = (
    "In the following clinical note, what should the <BLANK> in the sentence "
    '"{sentence}" be replaced with for it to be medically informative and '
    "accurate? Choose one from the options given below. Output your response "
    "in JSON format, with a key 'Answer'."
)

CLINICAL_NOTE_HEADER = "Clinical note:"

OPTIONS_HEADER = "Options:"

GENERATED_ANSWER_CUE = "Generated answer:"

REASON_REQUEST_HEADER = (
    "You are provided with a clinical text and its verified correction. "
    "Your job is to write the reasoning that explains the correction."
)

REASON_REQUEST_HEADER_NO_ERROR = (
    "You are provided with a clinical text that has been verified as "
    "correct. Your job is to write the reasoning that confirms it."
)

REASON_VERDICT_ERROR = (
    "Incorrect sentence ID: {sid}\nCorrected sentence: {corrected}"
)

REASON_VERDICT_NO_ERROR = "All sentences in the clinical text are correct."

REASON_STYLE_BRIEF = (
    "Write a brief reason in a couple of sentences that identifies the "
    "incorrect mention and explains why the correction is right. Respond "
    "with the reason only."
)

REASON_STYLE_BRIEF_NO_ERROR = (
    "Write a brief reason in a couple of sentences explaining why all "
    "sentences are correct. Respond with the reason only."
)

REASON_STYLE_LONG = (
    "Write a detailed step-by-step explanation that identifies the incorrect "
    "sentence, explains why it is inaccurate, and justifies the correction. "
    "Respond with the explanation only."
)

REASON_STYLE_LONG_NO_ERROR = (
    "Write a detailed step-by-step explanation of why every sentence is "
    "accurate. Respond with the explanation only."
)

REASON_STYLE_SOAP = (
    "Summarise the clinical text into 'Subjective:', 'Objective:', "
    "'Assessment:' and 'Plan:' sections, each on its own line, then add an "
    "'Inconsistency:' statement that identifies the incorrect sentence and "
    "justifies the correction. Respond with the summary and the statement "
    "only."
)

REASON_STYLE_SOAP_NO_ERROR = (
    "Summarise the clinical text into 'Subjective:', 'Objective:', "
    "'Assessment:' and 'Plan:' sections, each on its own line, then add a "
    "'Consistency:' statement explaining why all sentences are correct. "
    "Respond with the summary and the statement only."
)
