#ifndef CDFS_CDFS_H
#define CDFS_CDFS_H

#include <stddef.h>
#include <stdint.h>

#if defined(CDFS_BUILDING_LIBRARY)
#define CDFS_API __attribute__((visibility("default")))
#else
#define CDFS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* 0 on success, otherwise 1 + the library error code. */
typedef int cdfs_status;

enum {
  CDFS_OK = 0,
  CDFS_E_INVALID_ARGUMENT,
  CDFS_E_NOT_FOUND,
  CDFS_E_ALREADY_EXISTS,
  CDFS_E_INVALID_NAME,
  CDFS_E_NOT_A_DIRECTORY,
  CDFS_E_IS_A_DIRECTORY,
  CDFS_E_CORRUPT_IMAGE,
  CDFS_E_GEOMETRY_MISMATCH,
  CDFS_E_OUT_OF_RANGE,
  CDFS_E_NON_SEQUENTIAL_WRITE,
  CDFS_E_ALREADY_WRITTEN,
  CDFS_E_NOT_WRITTEN,
  CDFS_E_MEDIA_FULL,
  CDFS_E_DEVICE_NOT_VIRGIN,
  CDFS_E_IO_ERROR,
  CDFS_E_BAD_MAGIC,
  CDFS_E_BAD_CHECKSUM,
  CDFS_E_SELF_REF_MISMATCH,
  CDFS_E_TRUNCATED,
  CDFS_E_MALFORMED,
  CDFS_E_SORT_VIOLATION,
  CDFS_E_DUPLICATE_NAME,
  CDFS_E_NO_TRANSACTION,
  CDFS_E_STREAM_OPEN,
  CDFS_E_NO_SUCH_VERSION,
  CDFS_E_HOLE,
  CDFS_E_LINK_DEPTH,
  CDFS_E_ABOVE_ROOT,
  CDFS_E_ROOT_PROTECTED,
  CDFS_E_UNREADABLE,
  CDFS_E_UNSUPPORTED,
  CDFS_E_NO_VALID_EOT,
  CDFS_E_CROSS_DIRECTORY,
  CDFS_E_ORPHANING_REMOVAL,
  CDFS_E_INTERNAL
};

enum {
  CDFS_TYPE_FILE = 1,
  CDFS_TYPE_DIRECTORY = 2,
  CDFS_TYPE_SOFT_LINK = 3,
  CDFS_TYPE_FRAGMENTED = 4,
  CDFS_TYPE_ADDNAME = 6
};

enum { CDFS_SEEK_SET = 0, CDFS_SEEK_CUR = 1, CDFS_SEEK_END = 2 };

typedef struct cdfs_volume cdfs_volume;
typedef struct cdfs_reader cdfs_reader;
typedef struct cdfs_writer cdfs_writer;

typedef struct cdfs_entry {
  char name[49];
  uint32_t file_number;
  uint32_t file_size;
  uint32_t file_version;
  int type;
  uint16_t addname_count;
  int64_t modify_time; /* Unix seconds */
  uint64_t header_address;
} cdfs_entry;

typedef struct cdfs_version {
  uint32_t version;
  int type;
  uint32_t length;
  int64_t write_time;    /* Unix seconds */
  int64_t creation_time; /* Unix seconds */
  uint64_t header_address;
} cdfs_version;

typedef struct cdfs_df {
  uint64_t capacity;
  uint64_t usable;
  uint64_t written;
  uint64_t virgin;
  uint64_t destroyed;
} cdfs_df;

typedef struct cdfs_info {
  uint32_t trans_number;
  uint64_t last_eot_address;
  uint64_t next_write;
  uint32_t next_free_file_number;
  uint32_t block_size;
  uint64_t locate_probes;
  uint64_t total_probes;
  int premastered;
  int recovered;
} cdfs_info;

/* Message for the last failure on this thread ("" if none). */
CDFS_API const char* cdfs_last_error(void);
CDFS_API const char* cdfs_status_string(cdfs_status status);
/* Releases memory returned through out-parameters. */
CDFS_API void cdfs_free(void* p);

/* Volumes live in simulator images. scheme is "m0:b0,m1:b1,..." or NULL for
   the audio layout; site and owner may be NULL. */
CDFS_API cdfs_status cdfs_init(const char* image, uint64_t capacity_blocks, uint32_t block_size,
                               const char* scheme, const char* owner, const char* site,
                               cdfs_volume** out);
CDFS_API cdfs_status cdfs_mount(const char* image, const char* site, cdfs_volume** out);
/* Discards any uncommitted changes. */
CDFS_API void cdfs_close(cdfs_volume* v);
CDFS_API cdfs_status cdfs_commit(cdfs_volume* v);
CDFS_API int cdfs_transaction_open(cdfs_volume* v);
CDFS_API cdfs_status cdfs_get_info(cdfs_volume* v, cdfs_info* out);
CDFS_API cdfs_status cdfs_get_df(cdfs_volume* v, cdfs_df* out);

/* Paths use "/" to descend and ".." to climb; a leading "/" is the root. */
CDFS_API cdfs_status cdfs_stat(cdfs_volume* v, const char* path, int follow_links, cdfs_entry* out);
CDFS_API cdfs_status cdfs_list(cdfs_volume* v, const char* dir_path, const char* pattern,
                               cdfs_entry** entries, size_t* count);
CDFS_API cdfs_status cdfs_mkdir(cdfs_volume* v, const char* path);
CDFS_API cdfs_status cdfs_remove(cdfs_volume* v, const char* path);
CDFS_API cdfs_status cdfs_move(cdfs_volume* v, const char* old_path, const char* new_path);
CDFS_API cdfs_status cdfs_undelete(cdfs_volume* v, const char* dir_path, const char* name, uint32_t version,
                                   int new_number);
/* target is a path interpreted from the link's directory. */
CDFS_API cdfs_status cdfs_symlink(cdfs_volume* v, const char* target, const char* link_path, uint32_t version);
CDFS_API cdfs_status cdfs_addname(cdfs_volume* v, const char* primary_path, const char* name);
CDFS_API cdfs_status cdfs_remove_addname(cdfs_volume* v, const char* path);
CDFS_API cdfs_status cdfs_history(cdfs_volume* v, const char* path, cdfs_version** versions, size_t* count);
/* version 0 destroys every version. */
CDFS_API cdfs_status cdfs_destroy(cdfs_volume* v, const char* path, uint32_t version);

/* props holds "key=value" or bare "key" strings. */
CDFS_API cdfs_status cdfs_import(cdfs_volume* v, const char* native, const char* path, int align, int preserve,
                                 const char* const* props, size_t nprops);
CDFS_API cdfs_status cdfs_export(cdfs_volume* v, const char* path, uint32_t version, const char* native,
                                 int preserve);
CDFS_API cdfs_status cdfs_fragment(cdfs_volume* v, const char* path);
CDFS_API cdfs_status cdfs_unfragment(cdfs_volume* v, const char* path);
CDFS_API cdfs_status cdfs_patch(cdfs_volume* v, const char* path, uint64_t offset, const void* data, size_t n);

CDFS_API cdfs_status cdfs_open_read(cdfs_volume* v, const char* path, uint32_t version, cdfs_reader** out);
CDFS_API cdfs_status cdfs_read(cdfs_reader* r, void* buf, size_t n, size_t* got);
CDFS_API cdfs_status cdfs_seek(cdfs_reader* r, int64_t offset, int whence, uint64_t* pos);
CDFS_API uint64_t cdfs_reader_size(cdfs_reader* r);
CDFS_API void cdfs_reader_close(cdfs_reader* r);

CDFS_API cdfs_status cdfs_open_write(cdfs_volume* v, const char* path, cdfs_writer** out);
CDFS_API cdfs_status cdfs_write(cdfs_writer* w, const void* data, size_t n);
/* Emits the file; the writer is freed either way. */
CDFS_API cdfs_status cdfs_writer_close(cdfs_writer* w);
CDFS_API void cdfs_writer_abandon(cdfs_writer* w);

/* Renders a raw media address in the volume's dotted notation. */
CDFS_API cdfs_status cdfs_format_address(cdfs_volume* v, uint64_t address, char** text);

/* Text results are NUL-terminated and released with cdfs_free. */
CDFS_API cdfs_status cdfs_fsck(cdfs_volume* v, int verbose, char** report, int* clean);
CDFS_API cdfs_status cdfs_dump(cdfs_volume* v, const char* address, char** text);
CDFS_API cdfs_status cdfs_compact(cdfs_volume* v, const char* dst_image, int premastered);

#ifdef __cplusplus
}
#endif

#endif
