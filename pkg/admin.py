#admin.py - toolchain identity stamped into every generated artifact
#  Version Format, i.e. v1.020
#    'v' must be present in the version description
#    version 1
#    subversion 0
#    minor update 2
#    error fix 0
#
# tool_name shows up in provenance headers of product, program, profile and C output.
# wrapper_contract names the declaration set the emitted C code is written against.

version='v1.020'
tool_name='nfcompile'
wrapper_contract='nfc_wrapper.h'
min_profile_ver='1.000'
